import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hahn_echo_l, lab_drive_propagator
from sicqmn.lattice import C13
from sicqmn.physics import (
    DEFAULT_CONSTANTS,
    SX,
    SY,
    SZ,
    ElectronLevel,
    HyperfineVector,
    conditional_hamiltonian,
    transition_frequencies,
)
from sicqmn.pulses import (
    ConditionalUnitary,
    DdrfParams,
    PhaseSchedule,
    calibrate_rabi,
    cpmg_unitary,
    ddrf_branches,
    ddrf_unitary,
    electron_pulse,
    expm2,
    phase_schedule,
    schedule_array,
    segment_unitary,
)

MS32, MS12 = ElectronLevel.MS_3_2, ElectronLevel.MS_1_2
WL = DEFAULT_CONSTANTS.larmor(C13)


def unroll(n_pi, phi_tau, phi_init, rule):
    """Phase recursion written out as a plain loop."""
    ph = [phi_init, phi_init + phi_tau + np.pi]
    while len(ph) < n_pi:
        ph.append(ph[-2] + 2 * phi_tau)
    if n_pi >= 2:
        last = {"half": ph[n_pi - 2] + phi_tau, "previous": ph[n_pi - 1] + phi_tau,
                "tracking": ph[n_pi - 2] + 2 * phi_tau}[rule]
        ph.append(last)
    return np.array(ph[: n_pi + 1])


def rot(axis_phase, angle):
    n = np.cos(axis_phase) * SX + np.sin(axis_phase) * SY
    return expm2(n * angle / (2 * np.pi), 1.0)


def branch_fidelity(a, b):
    return abs(np.trace(a.conj().T @ b)) / 2


# ---------------------------------------------------------------- schedules


def test_schedule_zero_detuning_example():
    assert schedule_array(2, 0.0, 0.0, "previous") == pytest.approx([0, np.pi, np.pi])


def test_schedule_quarter_example():
    expected = [0, 3 * np.pi / 2, np.pi, 5 * np.pi / 2, 3 * np.pi]
    assert schedule_array(4, np.pi / 2, 0.0, "previous") == pytest.approx(expected)


def test_schedule_half_rule_as_written():
    ph = schedule_array(4, np.pi / 2, 0.0, "half")
    assert ph[-1] == pytest.approx(ph[2] + np.pi / 2)
    assert schedule_array(2, 0.0, 0.0, "half") == pytest.approx([0, np.pi, 0])


def test_schedule_length():
    assert len(schedule_array(3, 0.4)) == 4
    params = DdrfParams(3, 10e-6, 1.0)
    assert len(phase_schedule(params, 500e3, 510e3)) == 4
    with pytest.raises(ValueError):
        schedule_array(0, 0.1)
    with pytest.raises(ValueError):
        schedule_array(3, 0.1, rule="bogus")


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.floats(-10, 10), st.floats(-np.pi, np.pi),
       st.sampled_from(["half", "previous", "tracking"]))
def test_schedule_matches_unrolled_loop(n_pi, phi_tau, phi_init, rule):
    assert np.allclose(schedule_array(n_pi, phi_tau, phi_init, rule),
                       unroll(n_pi, phi_tau, phi_init, rule), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.floats(-5, 5), st.sampled_from(["half", "previous", "tracking"]))
def test_schedule_antisymmetry(n_pi, phi_tau, rule):
    plus = schedule_array(n_pi, phi_tau, 0.0, rule)
    minus = schedule_array(n_pi, -phi_tau, 0.0, rule)
    base = schedule_array(n_pi, 0.0, 0.0, rule)
    assert np.allclose(plus - base, -(minus - base), atol=1e-9)


def test_schedule_is_unreduced_and_serialisable():
    params = DdrfParams(50, 93e-6, 0.0)
    sched = phase_schedule(params, 500e3, 530e3)
    assert sched.phases.max() > 2 * np.pi
    assert np.all((sched.reduced() >= 0) & (sched.reduced() < 2 * np.pi))
    data = json.loads(sched.to_json(params))
    assert len(data["phases"]) == 51 and data["params"]["n_pi"] == 50
    assert isinstance(sched, PhaseSchedule)


def test_calibrate_rabi():
    assert calibrate_rabi(100, 93e-6, np.pi / 2) == pytest.approx(1 / (8 * 100 * 93e-6))


# ---------------------------------------------------------------- params


def test_params_validation_and_roundtrip():
    with pytest.raises(ValueError):
        DdrfParams(0, 1e-6, 1.0)
    with pytest.raises(ValueError):
        DdrfParams(2, -1e-6, 1.0)
    with pytest.raises(ValueError):
        DdrfParams(2, 1e-6, 1.0, rabi=-1.0)
    with pytest.raises(ValueError):
        DdrfParams(2, 1e-6, 1.0, final_phase_rule="nope")
    p = DdrfParams(100, 93e-6, 540e3, 25.0, 0.2)
    assert p.duration == pytest.approx(18.6e-3)
    assert DdrfParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p


# ---------------------------------------------------------------- segments


def test_undriven_segment_is_diagonal_for_on_axis_spin():
    hv = HyperfineVector(40e3)
    params = DdrfParams(4, 20e-6, 530e3, 0.0)
    for k in range(1, 6):
        for u in segment_unitary(k, params, hv, 0.3).values():
            assert np.allclose(u - np.diag(np.diag(u)), 0, atol=1e-12)


def test_first_segment_quarter_rotation():
    hv = HyperfineVector(40e3)
    w1, _ = transition_frequencies(hv)
    rabi = 500.0
    tau = 1 / (4 * rabi)
    params = DdrfParams(2, tau, w1, rabi)
    seg = segment_unitary(1, params, hv, 0.7)[MS32]
    frame = expm2(-w1 * SZ, tau)  # R(t) = exp(+2 pi i w t I_z)
    expected = rot(0.7, np.pi / 2)
    assert branch_fidelity(frame @ seg, expected) == pytest.approx(1.0, abs=1e-12)


def test_segment_parity_uses_other_level():
    hv = HyperfineVector(40e3)
    w1, w2 = transition_frequencies(hv)
    params = DdrfParams(4, 15e-6, 0.0, 0.0)
    seg = segment_unitary(2, params, hv, 0.0)[MS32]
    assert np.allclose(seg, expm2(w2 * SZ, 2 * 15e-6), atol=1e-12)
    seg = segment_unitary(3, params, hv, 0.0)[MS32]
    assert np.allclose(seg, expm2(w1 * SZ, 2 * 15e-6), atol=1e-12)
    with pytest.raises(IndexError):
        segment_unitary(6, params, hv, 0.0)


# ---------------------------------------------------------------- full sequence


def test_unitarity_over_random_batch():
    rng = np.random.default_rng(1)
    n = 1000
    a_par = rng.uniform(-2e5, 2e5, n)
    a_perp = rng.uniform(0, 1e5, n)
    omega = WL + rng.uniform(-1e5, 1e5, n)
    rabi = rng.uniform(0, 2e3, n)
    phases = rng.uniform(-10, 10, (n, 9))
    cu = ConditionalUnitary(*ddrf_branches(WL, a_par, a_perp, 8, 30e-6, omega, rabi, phases))
    assert cu.unitarity_error() < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_matches_time_stepped_integrator(seed):
    rng = np.random.default_rng(seed)
    a_par, a_perp = rng.uniform(-80e3, 80e3), rng.uniform(0, 40e3)
    n_pi, tau = int(rng.integers(1, 4)), rng.uniform(3e-6, 8e-6)
    w1, w2 = transition_frequencies(HyperfineVector(a_par, a_perp), larmor_hz=WL)
    omega, rabi = w1 + rng.uniform(-2e3, 2e3), rng.uniform(500, 3000)
    phases = schedule_array(n_pi, 2 * np.pi * (w2 - w1) * tau, rng.uniform(0, 6))
    u32, u12 = ddrf_branches(WL, a_par, a_perp, n_pi, tau, omega, rabi, phases)
    for first, u in ((1.5, u32), (0.5, u12)):
        ref = lab_drive_propagator(WL, a_par, a_perp, n_pi, tau, omega, rabi, phases, first)
        assert branch_fidelity(u, ref) > 1 - 1e-6


def test_rotating_frame_output_omits_last_frame():
    # the closing frame turns about each branch's own axis; for an on-axis
    # spin both axes are z and the overlap is frame independent
    hv = HyperfineVector(30e3)
    params = DdrfParams(3, 20e-6, 560e3, 300.0)
    lab = ddrf_unitary(params, hv)
    rotating = ddrf_unitary(params, hv, frame="rotating")
    assert not np.allclose(lab.u_32, rotating.u_32)
    assert abs(lab.overlap()) == pytest.approx(abs(rotating.overlap()), abs=1e-12)
    frame = expm2(params.omega * SZ, params.duration)
    assert np.allclose(frame @ rotating.u_32, lab.u_32, atol=1e-10)
    with pytest.raises(ValueError):
        ddrf_unitary(params, hv, frame="sideways")


def test_undriven_on_axis_keeps_electron_coherence():
    cu = ddrf_unitary(DdrfParams(10, 50e-6, 0.0, 0.0), HyperfineVector(0.0))
    assert abs(cu.overlap()) == pytest.approx(1.0, abs=1e-12)
    cu = ddrf_unitary(DdrfParams(10, 50e-6, 0.0, 0.0), HyperfineVector(60e3))
    assert np.allclose(cu.u_32 - np.diag(np.diag(cu.u_32)), 0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(60e3, 150e3), st.sampled_from([-1, 1]), st.floats(0, 2 * np.pi))
def test_calibrated_crot_matches_ideal(a_abs, sign, phi0):
    hv = HyperfineVector(sign * a_abs)
    w1, _ = transition_frequencies(hv)
    n_pi, tau = 100, 93e-6
    params = DdrfParams(n_pi, tau, w1, calibrate_rabi(n_pi, tau, np.pi / 2), phi0,
                        final_phase_rule="tracking")
    cu = ddrf_unitary(params, hv)
    free = ddrf_unitary(params.replace(rabi=0.0), hv)
    assert branch_fidelity(cu.u_32, free.u_32 @ rot(phi0, np.pi / 4)) >= 0.999
    assert branch_fidelity(cu.u_12, free.u_12 @ rot(phi0, -np.pi / 4)) >= 0.999


def test_far_detuned_drive_preserves_coherence():
    hv = HyperfineVector(100e3)
    w1, w2 = transition_frequencies(hv)
    n_pi, tau = 100, 93e-6
    rabi = calibrate_rabi(n_pi, tau, np.pi / 2)
    sched = phase_schedule(DdrfParams(n_pi, tau, w1), w1, w2).phases
    base = abs(ddrf_unitary(DdrfParams(n_pi, tau, w1, 0.0), hv, phases=sched).overlap())
    for det in (50, 80, 200):
        p = DdrfParams(n_pi, tau, w1 + det * rabi, rabi)
        assert abs(ddrf_unitary(p, hv, phases=sched).overlap()) >= 0.99 * base


# ---------------------------------------------------------------- CPMG


def test_cpmg_equal_branches():
    h = conditional_hamiltonian(MS32, HyperfineVector(20e3, 5e3))
    v32, v12 = cpmg_unitary(4, 10e-6, h, h)
    expected = expm2(h, 8 * 10e-6)
    assert np.allclose(v32, expected) and np.allclose(v12, expected)


def test_cpmg_zero_hamiltonian_and_errors():
    z = np.zeros((4, 4))
    v32, v12 = cpmg_unitary(3, 1e-5, z, z)
    assert np.allclose(v32, np.eye(4)) and np.allclose(v12, np.eye(4))
    with pytest.raises(ValueError):
        cpmg_unitary(3, 1e-5, np.zeros((2, 2)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        cpmg_unitary(0, 1e-5, z, z)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e5, 1e5), st.floats(0, 5e4), st.floats(1e-6, 1e-3))
def test_hahn_echo_closed_form(a_par, a_perp, tau):
    hv = HyperfineVector(a_par, a_perp)
    h32 = conditional_hamiltonian(MS32, hv)
    h12 = conditional_hamiltonian(MS12, hv)
    v32, v12 = cpmg_unitary(1, tau, h32, h12)
    overlap = np.trace(v12.conj().T @ v32) / 2
    assert abs(overlap - hahn_echo_l(WL, a_par, a_perp, tau)[0]) < 1e-9


def test_cpmg_matches_ddrf_without_drive():
    hv = HyperfineVector(25e3, 12e3)
    h32 = conditional_hamiltonian(MS32, hv)
    h12 = conditional_hamiltonian(MS12, hv)
    for n_pi in (1, 2, 5, 8):
        v32, v12 = cpmg_unitary(n_pi, 17e-6, h32, h12)
        cu = ddrf_unitary(DdrfParams(n_pi, 17e-6, 0.0, 0.0), hv)
        assert np.allclose(v32, cu.u_32, atol=1e-9) and np.allclose(v12, cu.u_12, atol=1e-9)


# ---------------------------------------------------------------- electron pulses


def test_electron_pulses():
    up12 = np.array([1, 0], dtype=complex)
    out = electron_pulse("pi_y_half") @ up12
    target = np.array([1, 1]) / np.sqrt(2)
    assert abs(np.vdot(target, out)) == pytest.approx(1.0)
    px = electron_pulse("pi_x")
    assert np.allclose(px @ px, -np.eye(2))
    assert np.allclose(electron_pulse("pi_half", 0.0), electron_pulse("pi_half", np.pi).conj().T)
    assert np.allclose(electron_pulse("pi_half", np.pi / 2), electron_pulse("pi_y_half"))
    with pytest.raises(ValueError):
        electron_pulse("pi_z")
