"""Electron-mediated CNOT between two uncoupled nuclear spins.

Primitive: the conditional rotation G_j(axis, s) = exp(-i s pi/4 Z_e sigma_axis,j),
i.e. the nucleus j turns by +-pi/2 depending on the electron level. With
electron order (|1/2>, |3/2>), Z_e = +1 on |1/2>. The circuit

    G_x2 . G_y1 . Rx_e(pi/2)^dag . G_x1 . H_e G_x2^dag H_e . G_x1^dag . Rx_e(pi/2) . G_y1^dag

(rightmost first) equals CNOT(n1 -> n2) up to local z phases and leaves the
electron in |1/2>. Each G is realised by a DDrf block resonant with omega1 of
nucleus j; every other nucleus evolves under the same block, so crosstalk
and hyperfine echo errors are included.
"""

from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from sicqmn.lattice import C13, GAMMA_MHZ_PER_T, SpinBath
from sicqmn.physics import DEFAULT_CONSTANTS, HyperfineVector, hyperfine_components
from sicqmn.pulses import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    ConditionalUnitary,
    calibrate_rabi,
    ddrf_branches,
    electron_pulse,
    schedule_array,
)
from sicqmn.physics import transition_frequencies_array

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_AXIS_PHASE = {"x": 0.0, "y": np.pi / 2}
_PAULI = {"x": PAULI_X, "y": PAULI_Y}


class CalibrationError(ValueError):
    pass


# ----------------------------------------------------------------------------
# baths with explicit couplings


@dataclass(frozen=True)
class GateBath:
    """Nuclear spins described directly by their Larmor and hyperfine values (Hz)."""

    larmor: np.ndarray
    a_par: np.ndarray
    a_perp: np.ndarray
    species: tuple = ()
    name: str = ""

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in
                (self.larmor, self.a_par, self.a_perp)]
        if len({a.shape for a in arrs}) != 1:
            raise ValueError("larmor, a_par and a_perp must share a shape")
        for name, a in zip(("larmor", "a_par", "a_perp"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not self.species:
            object.__setattr__(self, "species", (C13,) * len(arrs[0]))

    def __len__(self) -> int:
        return len(self.larmor)

    def subset(self, idx) -> "GateBath":
        idx = list(idx)
        return GateBath(self.larmor[idx], self.a_par[idx], self.a_perp[idx],
                        tuple(self.species[i] for i in idx), self.name)

    @property
    def omegas(self):
        return transition_frequencies_array(self.larmor, self.a_par, self.a_perp)

    @classmethod
    def from_spin_bath(cls, bath: SpinBath, constants=DEFAULT_CONSTANTS) -> "GateBath":
        gam = bath.gamma
        hf = hyperfine_components(bath.positions, gam, constants)
        return cls(gam * 1e6 * constants.b0, hf[:, 0], np.hypot(hf[:, 1], hf[:, 2]),
                   tuple(str(s) for s in bath.species))

    @classmethod
    def from_dict(cls, d: dict, constants=DEFAULT_CONSTANTS) -> "GateBath":
        spins = d["spins"]
        species = tuple(s.get("species", C13) for s in spins)
        larmor = np.array([constants.larmor(GAMMA_MHZ_PER_T[s]) for s in species])
        a_par = np.array([s["a_zz_khz"] for s in spins]) * 1e3
        a_perp = np.abs(np.array([s["a_xz_khz"] for s in spins])) * 1e3
        return cls(larmor, a_par, a_perp, species, d.get("name", ""))


def reference_bath(constants=DEFAULT_CONSTANTS) -> GateBath:
    """Four 13C spins with the shipped reference couplings."""
    text = resources.files("sicqmn").joinpath("data/reference_bath.json").read_text()
    return GateBath.from_dict(json.loads(text), constants)


# ----------------------------------------------------------------------------
# primitives


def ideal_conditional(axis: str, sign: int = 1) -> np.ndarray:
    """exp(-i sign pi/4 Z_e (x) sigma_axis) on (electron, nucleus)."""
    gen = np.kron(PAULI_Z, _PAULI[axis])
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(-1j * sign * np.pi / 4 * w)) @ v.conj().T


def _drive_phase(axis: str, sign: int) -> float:
    # DDrf turns the |3/2>-first branch about phi_1 and the |1/2>-first branch
    # about phi_1 + pi; the |1/2> branch must see +sign * pi/2 about ``axis``.
    return _AXIS_PHASE[axis] + (np.pi if sign > 0 else 0.0)


def conditional_pi2(hv: HyperfineVector, direction: int, n_pi: int, tau_n: float, species=C13,
                    constants=DEFAULT_CONSTANTS, larmor_hz=None, axis: str = "x",
                    rule: str = "tracking", max_rabi_fraction: float = 0.1) -> ConditionalUnitary:
    """DDrf block turning the nucleus by +-pi/2 about ``axis`` depending on the electron.

    ``direction`` = +1 turns the |1/2> branch by +pi/2 and the |3/2> branch by
    -pi/2; -1 reverses both.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    wl = constants.larmor(species) if larmor_hz is None else float(larmor_hz)
    w1, w2 = transition_frequencies_array(wl, hv.a_par, hv.a_perp)
    rabi = calibrate_rabi(n_pi, tau_n, np.pi)
    if rabi > max_rabi_fraction * abs(w2 - w1):
        raise CalibrationError(
            f"rabi {rabi:.4g} Hz exceeds {max_rabi_fraction} x |omega2 - omega1| = "
            f"{max_rabi_fraction * abs(w2 - w1):.4g} Hz; increase N or tau_n")
    phases = schedule_array(n_pi, 2 * np.pi * (w2 - w1) * tau_n, _drive_phase(axis, direction),
                            rule)
    u32, u12 = ddrf_branches(wl, hv.a_par, hv.a_perp, n_pi, tau_n, w1, rabi, phases)
    return ConditionalUnitary(u32, u12)


CIRCUIT = (
    ("G", 0, "y", -1),
    ("E", "rx"),
    ("G", 0, "x", -1),
    ("E", "h"),
    ("G", 1, "x", -1),
    ("E", "h"),
    ("G", 0, "x", 1),
    ("E", "rx_dag"),
    ("G", 0, "y", 1),
    ("G", 1, "x", 1),
)


def _electron_gate(name):
    if name == "h":
        return HADAMARD
    r = electron_pulse("pi_x_half")
    return r if name == "rx" else r.conj().T


def ideal_cnot_circuit() -> np.ndarray:
    """8x8 circuit of ideal primitives on (electron, n1, n2)."""
    eye = np.eye(2)
    u = np.eye(8, dtype=complex)
    for step in CIRCUIT:
        if step[0] == "E":
            op = np.kron(_electron_gate(step[1]), np.eye(4))
        else:
            _, j, axis, sign = step
            g = ideal_conditional(axis, sign).reshape(2, 2, 2, 2)
            full = np.einsum("aibj,kl->aikbjl", g, eye) if j == 0 else \
                np.einsum("aibj,kl->akiblj", g, eye)
            op = full.reshape(8, 8)
        u = op @ u
    return u


# ----------------------------------------------------------------------------
# fidelity


def _zgauge_vectors(phases):
    """Diagonals of L = diag(1, e^ia) (x) diag(1, e^ib) and R likewise with (c, d)."""
    p = np.atleast_2d(phases)
    e = np.exp(1j * p)
    one = np.ones(len(p))
    left = np.stack([one, e[:, 1], e[:, 0], e[:, 0] * e[:, 1]], axis=1)
    right = np.stack([one, e[:, 3], e[:, 2], e[:, 2] * e[:, 3]], axis=1)
    return left, right


def gate_fidelity(actual, ideal=CNOT) -> float:
    """max over local z phases of |Tr(ideal^dag L actual R)| / 4."""
    actual = np.asarray(actual, dtype=complex)
    ideal = np.asarray(ideal, dtype=complex)
    if actual.shape != (4, 4) or ideal.shape != (4, 4):
        raise ValueError("gate_fidelity works on 4x4 two-qubit operators")
    # Tr(C^dag L M R) = sum_ij conj(C_ij) l_i M_ij r_j
    k = ideal.conj() * actual

    def overlaps(p):
        left, right = _zgauge_vectors(p)
        return np.abs(np.einsum("gi,ij,gj->g", left, k, right)) / 4

    grid = np.array(list(itertools.product(np.arange(4) * np.pi / 2, repeat=4)))
    vals = overlaps(grid)
    best = vals.max()
    for x0 in grid[np.argsort(-vals)[:3]]:
        res = minimize(lambda p: -overlaps(p)[0], x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -res.fun)
    return float(min(1.0, best))


# ----------------------------------------------------------------------------
# DDrf realisation


@dataclass(frozen=True)
class GateSpec:
    control: int
    target: int
    n_pi: int = 40
    tau_n: float = 130e-6
    rule: str = "tracking"

    def __post_init__(self):
        if self.control == self.target:
            raise ValueError("control and target must differ")
        if self.n_pi % 2:
            raise ValueError("gates need an even number of electron pi pulses")
        if self.tau_n <= 0:
            raise ValueError("tau_n must be positive")


@dataclass
class CnotResult:
    unitary: np.ndarray  # (electron (x) control (x) target (x) spectators)
    n_spectators: int
    fidelity_frozen: float
    fidelity_active: float
    residual: float
    warnings: list = field(default_factory=list)


def _block_unitaries(gb: GateBath, j, axis, sign, spec: GateSpec, t0):
    """Per-nucleus (u32, u12) for a DDrf block driving nucleus j."""
    w1, w2 = gb.omegas
    rabi = calibrate_rabi(spec.n_pi, spec.tau_n, np.pi)
    fbar = 0.5 * (w1[j] + w2[j]) * np.sign(gb.larmor[j])
    phi0 = _drive_phase(axis, sign) + 2 * np.pi * fbar * t0
    phases = schedule_array(spec.n_pi, 2 * np.pi * (w2[j] - w1[j]) * spec.tau_n, phi0, spec.rule)
    return ddrf_branches(gb.larmor, gb.a_par, gb.a_perp, spec.n_pi, spec.tau_n, w1[j], rabi,
                         phases)


def _kron_all(mats):
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _frame_correction(gb: GateBath, total_time):
    """Undo each nucleus's mean free precession over the circuit (a local z gauge,
    applied so the reported operator lives in the nuclear rotating frames)."""
    w1, w2 = gb.omegas
    mats = []
    for i in range(len(gb)):
        f = 0.5 * (w1[i] + w2[i]) * np.sign(gb.larmor[i])
        ang = 2 * np.pi * f * total_time
        mats.append(np.diag([np.exp(1j * ang / 2), np.exp(-1j * ang / 2)]))
    return _kron_all(mats)


def _circuit_unitary(gb: GateBath, order, spec: GateSpec):
    """Full unitary with nuclei ordered as ``order`` (control, target, spectators)."""
    sub = gb.subset(order)
    n = len(sub)
    dn = 2 ** n
    u = np.eye(2 * dn, dtype=complex)
    t = 0.0
    block_time = 2 * spec.n_pi * spec.tau_n
    flip_sign = (-1) ** (spec.n_pi // 2)  # (-i sigma_x)^N for even N
    for step in CIRCUIT:
        if step[0] == "E":
            u = np.kron(_electron_gate(step[1]), np.eye(dn)) @ u
            continue
        _, j, axis, sign = step
        u32, u12 = _block_unitaries(sub, j, axis, sign, spec, t)
        op = np.zeros((2 * dn, 2 * dn), dtype=complex)
        op[:dn, :dn] = _kron_all(u12)
        op[dn:, dn:] = _kron_all(u32)
        u = flip_sign * op @ u
        t += block_time
    frame = np.kron(np.eye(2), _frame_correction(sub, t))
    return frame @ u


def _basis_flip(gb: GateBath, order):
    """Relabel basis of nuclei whose Larmor frequency is negative."""
    mats = [PAULI_X if gb.larmor[i] < 0 else np.eye(2) for i in order]
    return _kron_all(mats)


def _reduced(u, n_spec, spectator_state=0):
    """Electron-|1/2> to |1/2> block on the two gate qubits for one spectator basis state."""
    d_s = 2 ** n_spec
    blk = u[: 4 * d_s, : 4 * d_s].reshape(4, d_s, 4, d_s)
    return blk[:, spectator_state, :, spectator_state]


def nn_cnot(control: int, target: int, bath: GateBath, spec: GateSpec | None = None,
            include_spectators: bool = True, max_spectators: int = 6,
            residual_tol: float = 1e-3) -> CnotResult:
    """Simulate the DDrf CNOT between two nuclei of ``bath``.

    Spectators (other bath nuclei, the strongest ``max_spectators`` by
    coupling) evolve under every block when ``include_spectators``.
    """
    spec = spec or GateSpec(control, target)
    if control == target:
        raise ValueError("control and target must differ")
    n = len(bath)
    if not (0 <= control < n and 0 <= target < n):
        raise IndexError("spin index out of range")
    others = [i for i in range(n) if i not in (control, target)]
    others.sort(key=lambda i: -np.hypot(bath.a_par[i], bath.a_perp[i]))
    spectators = others[:max_spectators] if include_spectators else []

    frozen_order = [control, target]
    uf = _circuit_unitary(bath, frozen_order, spec)
    flip = _basis_flip(bath, frozen_order)
    mf = flip @ _reduced(uf, 0) @ flip
    residual = float(np.max(np.abs(mf.conj().T @ mf - np.eye(4))))
    f_frozen = gate_fidelity(mf)
    notes = []
    if residual > residual_tol:
        notes.append(f"electron not disentangled: residual {residual:.3g}")

    if spectators:
        order = frozen_order + spectators
        ua = _circuit_unitary(bath, order, spec)
        f_active = min(
            gate_fidelity(flip @ _reduced(ua, len(spectators), s) @ flip)
            for s in range(2 ** len(spectators))
        )
        full = ua
    else:
        f_active = f_frozen
        full = uf
    if notes:
        warnings.warn("; ".join(notes), RuntimeWarning, stacklevel=2)
    return CnotResult(full, len(spectators), f_frozen, f_active, residual, notes)


@dataclass
class FidelityMatrix:
    indices: tuple
    frozen: np.ndarray
    active: np.ndarray

    def pairs(self):
        for a, i in enumerate(self.indices):
            for b, j in enumerate(self.indices):
                if i != j:
                    yield i, j, float(self.frozen[a, b]), float(self.active[a, b])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["control_idx", "target_idx", "fidelity_frozen", "fidelity_active"])
            for i, j, ff, fa in self.pairs():
                w.writerow([i, j, format(ff, ".17g"), format(fa, ".17g")])


def fidelity_matrix(bath: GateBath, spec: GateSpec | None = None, indices=None,
                    include_spectators: bool = True, max_spectators: int = 6) -> FidelityMatrix:
    """CNOT fidelities for all ordered pairs among ``indices`` (default: all)."""
    idx = tuple(range(len(bath))) if indices is None else tuple(int(i) for i in indices)
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate spin indices")
    m = len(idx)
    frozen = np.full((m, m), np.nan)
    active = np.full((m, m), np.nan)
    if m < 2:
        warnings.warn("fewer than two spins; empty fidelity matrix", RuntimeWarning, stacklevel=2)
        return FidelityMatrix(idx, frozen, active)
    base = spec or GateSpec(0, 1)
    for a, i in enumerate(idx):
        for b, j in enumerate(idx):
            if i == j:
                continue
            s = GateSpec(i, j, base.n_pi, base.tau_n, base.rule)
            res = nn_cnot(i, j, bath, s, include_spectators, max_spectators)
            frozen[a, b] = res.fidelity_frozen
            active[a, b] = res.fidelity_active
    return FidelityMatrix(idx, frozen, active)


def search_sequence(bath: GateBath, n_grid=(20, 30, 40, 50, 60),
                    tau_grid=np.arange(60e-6, 161e-6, 5e-6), include_spectators=True,
                    rule: str = "tracking") -> tuple[GateSpec, float]:
    """(N, tau) maximising the worst pairwise fidelity over ``bath``."""
    best, best_f = None, -1.0
    for n in n_grid:
        for tau in tau_grid:
            spec = GateSpec(0, 1, int(n), float(tau), rule)
            fm = fidelity_matrix(bath, spec, include_spectators=include_spectators)
            worst = float(np.nanmin(fm.active))
            if worst > best_f:
                best, best_f = spec, worst
    return best, best_f
