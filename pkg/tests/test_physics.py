import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sicqmn.lattice import C13, SI29
from sicqmn.physics import (
    DEFAULT_CONSTANTS,
    SX,
    SZ,
    ElectronLevel,
    HyperfineVector,
    conditional_hamiltonian,
    hyperfine_components,
    hyperfine_vector,
    rotating_frame_hamiltonian,
    tilt_angle,
    tilted_operators,
    transition_frequencies,
)
from sicqmn.pulses import expm2

MS32, MS12 = ElectronLevel.MS_3_2, ElectronLevel.MS_1_2
couplings = st.floats(-3e5, 3e5, allow_nan=False)


def point_dipole_hz(pos_nm, gamma_n_hz_t):
    """Energy (mu0/4pi)(h gamma_e)(h gamma_n)(3 n_z n - e_z)/r^3 divided by h."""
    r = np.linalg.norm(pos_nm) * 1e-9
    n = np.asarray(pos_nm) / np.linalg.norm(pos_nm)
    h = 6.62607015e-34
    pref = 1e-7 * (h * 28.02e9) * (h * gamma_n_hz_t) / r**3 / h
    return pref * (3 * n[2] * n[2] - 1), pref * 3 * n[0] * n[2], pref * 3 * n[1] * n[2]


def test_larmor_c13():
    assert DEFAULT_CONSTANTS.larmor(C13) == pytest.approx(535.5e3, rel=1e-12)
    assert DEFAULT_CONSTANTS.larmor(SI29) == pytest.approx(-423e3, rel=1e-12)


@pytest.mark.parametrize("pos", [(0, 0, 0.5), (0.3, -0.2, 0.4), (1.0, 1.0, -0.3)])
def test_hyperfine_matches_hand_formula(pos):
    hv = hyperfine_vector(pos, 10.71)
    ref = point_dipole_hz(pos, 10.71e6)
    assert (hv.a_par, hv.a_xz, hv.a_yz) == pytest.approx(ref, rel=1e-12)


def test_on_axis_has_no_transverse_part():
    hv = hyperfine_vector((0, 0, 0.7), 10.71)
    assert hv.a_xz == 0 and hv.a_yz == 0
    theta = np.linspace(0.05, np.pi - 0.05, 50)
    others = [hyperfine_vector((0.7 * np.sin(t), 0, 0.7 * np.cos(t)), 10.71).a_par for t in theta]
    assert hv.a_par > max(others)


def test_scale_at_half_nanometre():
    hv = hyperfine_vector((0.5 * np.sin(1.0), 0, 0.5 * np.cos(1.0)), 10.71)
    assert 1e2 < math.hypot(hv.a_par, hv.a_perp) < 4e5


def test_inverse_cube_law():
    a = hyperfine_vector((0.2, 0.3, 0.4), 10.71)
    b = hyperfine_vector((0.4, 0.6, 0.8), 10.71)
    for x, y in zip((a.a_par, a.a_xz, a.a_yz), (b.a_par, b.a_xz, b.a_yz)):
        assert y == pytest.approx(x / 8, rel=1e-12)


def test_zero_position_rejected():
    with pytest.raises(ValueError):
        hyperfine_vector((0, 0, 0), 10.71)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 3), st.floats(0, np.pi), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_z_rotation_equivariance(r, theta, phi, alpha):
    p = np.array([r * np.sin(theta) * np.cos(phi), r * np.sin(theta) * np.sin(phi), r * np.cos(theta)])
    c, s = np.cos(alpha), np.sin(alpha)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    a = hyperfine_components(p, 10.71)[0]
    b = hyperfine_components(rot @ p, 10.71)[0]
    scale = np.abs(a).max() + 1e-300
    assert abs(a[0] - b[0]) < 1e-12 * scale
    assert np.allclose(rot[:2, :2] @ a[1:], b[1:], atol=1e-12 * scale)


def test_conditional_hamiltonian_zero_coupling():
    h = conditional_hamiltonian(MS32, HyperfineVector(0.0), C13)
    w = np.linalg.eigvalsh(h)
    assert w[1] - w[0] == pytest.approx(535.5e3, rel=1e-12)


def test_fig_reference_splitting():
    hv = HyperfineVector(12.5e3, 2.3e3)
    w = np.linalg.eigvalsh(conditional_hamiltonian(MS32, hv, C13))
    assert w[1] - w[0] == pytest.approx(transition_frequencies(hv, C13)[0], rel=1e-9)


def test_transition_frequency_limits():
    w1, w2 = transition_frequencies(HyperfineVector(0.0), C13)
    assert w1 == w2 == pytest.approx(535.5e3)
    w1, w2 = transition_frequencies(HyperfineVector(40e3), C13)
    assert w1 == pytest.approx(abs(535.5e3 + 1.5 * 40e3))
    assert w2 == pytest.approx(abs(535.5e3 + 0.5 * 40e3))


@pytest.mark.parametrize("species", [C13, SI29])
def test_third_reference_spin_matches_eigensolver(species):
    hv = HyperfineVector(-18.9e3, -13e3)
    w1, w2 = transition_frequencies(hv, species)
    for level, w in ((MS32, w1), (MS12, w2)):
        ev = np.linalg.eigvalsh(conditional_hamiltonian(level, hv, species))
        assert ev[1] - ev[0] == pytest.approx(w, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(couplings, couplings, couplings, st.sampled_from([C13, SI29]))
def test_splitting_oracle_and_reconstruction(a_par, a_xz, a_yz, species):
    hv = HyperfineVector(a_par, a_xz, a_yz)
    freqs = transition_frequencies(hv, species)
    for level, w in zip((MS32, MS12), freqs):
        h = conditional_hamiltonian(level, hv, species)
        assert np.allclose(h, h.conj().T, atol=1e-12 * np.abs(h).max())
        ev = np.linalg.eigvalsh(h)
        assert ev[1] - ev[0] == pytest.approx(w, rel=1e-9)
        beta = tilt_angle(level, hv, species)
        _, _, iz = tilted_operators(beta)
        assert np.allclose(w * iz, h, atol=1e-12 * np.abs(h).max())


def test_tilt_examples():
    assert tilt_angle(MS32, HyperfineVector(10e3, 0.0), C13) == 0.0
    hv = HyperfineVector(0.0, 20e3)
    assert tilt_angle(MS12, hv, larmor_hz=0.5 * 20e3) == pytest.approx(np.pi / 4)
    with pytest.raises(ValueError):
        tilt_angle(MS12, HyperfineVector(0.0), larmor_hz=0.0)


def test_rotating_frame_examples():
    hv = HyperfineVector(30e3, 0.0)
    w1, w2 = transition_frequencies(hv, C13)
    h = rotating_frame_hamiltonian(MS32, hv, {"omega": w1, "phase": 0.0, "rabi": 0.0}, C13)
    assert np.allclose(h, 0)
    h = rotating_frame_hamiltonian(MS12, hv, {"omega": w1, "phase": 0.0, "rabi": 0.0}, C13)
    assert np.allclose(h, (w2 - w1) * SZ)
    rabi = 1e3
    h = rotating_frame_hamiltonian(MS32, hv, {"omega": w1, "phase": 0.0, "rabi": rabi}, C13)
    assert np.allclose(h, rabi * SX)
    u = expm2(h, 1 / (2 * rabi))
    assert np.allclose(u, -1j * np.array([[0, 1], [1, 0]]), atol=1e-12)


def test_rotating_wave_warning():
    with pytest.warns(RuntimeWarning):
        rotating_frame_hamiltonian(MS32, HyperfineVector(0.0),
                                   {"omega": 535.5e3, "phase": 0.0, "rabi": 60e3}, C13)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rotating_frame_hamiltonian(MS32, HyperfineVector(0.0),
                                   {"omega": 535.5e3, "phase": 0.0, "rabi": 10e3}, C13)
    with pytest.raises(ValueError):
        rotating_frame_hamiltonian(MS32, HyperfineVector(0.0), {"omega": 1.0, "rabi": -1.0})


def test_free_evolution_over_larmor_period_is_identity():
    h = conditional_hamiltonian(MS32, HyperfineVector(0.0), C13)
    u = expm2(h, 1 / 535.5e3)
    assert np.allclose(u, -np.eye(2), atol=1e-9)
