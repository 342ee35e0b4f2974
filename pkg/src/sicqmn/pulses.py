"""DDrf and CPMG sequence propagators.

Electron pulses are ideal and instantaneous. The electron pseudo-qubit is
ordered (|1/2>, |3/2>), so the initial state |1/2> is basis vector 0.

The DDrf sequence with N electron pi pulses splits into N + 1 rf segments of
lengths tau, 2 tau, ..., 2 tau, tau. Segment k is propagated in the lab frame
as R^T(t_end) U(duration, phi_k) R(t_start), where U is the rotating-frame
propagator and R(t) = exp(+2j pi w t I_z,beta) undoes the frame rotation at
the drive frequency w. Everything is vectorised over a leading batch axis of
nuclear spins.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from sicqmn.physics import (
    DEFAULT_CONSTANTS,
    C13,
    ElectronLevel,
    HyperfineVector,
    tilted_operators,
    transition_frequencies_array,
)

MS32 = ElectronLevel.MS_3_2
MS12 = ElectronLevel.MS_1_2

FINAL_PHASE_RULES = ("half", "previous", "tracking")

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def expm2(h, t=1.0):
    """exp(-2j pi h t) for a stack of 2x2 Hermitian matrices ``h`` (Hz)."""
    h = np.asarray(h, dtype=complex)
    t = np.asarray(t, dtype=float)
    h0 = 0.5 * (h[..., 0, 0] + h[..., 1, 1]).real
    hz = 0.5 * (h[..., 0, 0] - h[..., 1, 1]).real
    hx = h[..., 0, 1].real
    hy = -h[..., 0, 1].imag
    norm = np.sqrt(hx * hx + hy * hy + hz * hz)
    theta = 2 * np.pi * t * norm
    sinc = 2 * np.pi * t * np.sinc(2 * t * norm)  # sin(theta) / norm
    c = np.cos(theta)
    g = np.exp(-2j * np.pi * t * h0)
    out = np.empty(np.broadcast_shapes(h.shape, np.shape(t) + (2, 2)), dtype=complex)
    out[..., 0, 0] = g * (c - 1j * sinc * hz)
    out[..., 1, 1] = g * (c + 1j * sinc * hz)
    out[..., 0, 1] = g * (-1j * sinc * (hx - 1j * hy))
    out[..., 1, 0] = g * (-1j * sinc * (hx + 1j * hy))
    return out


def expm_hermitian(h, t=1.0):
    """exp(-2j pi h t) for stacks of Hermitian matrices of any size."""
    h = np.asarray(h, dtype=complex)
    if h.shape[-1] == 2:
        return expm2(h, t)
    w, v = np.linalg.eigh(h)
    ph = np.exp(-2j * np.pi * np.asarray(t, dtype=float)[..., None] * w)
    return (v * ph[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


# ----------------------------------------------------------------------------
# sequence descriptions


@dataclass(frozen=True)
class DdrfParams:
    """DDrf sequence: N electron pi pulses, half-segment ``tau_n`` (s),
    rf drive frequency ``omega`` (Hz) and Rabi amplitude ``rabi`` (Hz)."""

    n_pi: int
    tau_n: float
    omega: float
    rabi: float = 0.0
    phi_initial: float = 0.0
    initial_electron_level: ElectronLevel = MS32
    final_phase_rule: str = "half"

    def __post_init__(self):
        if int(self.n_pi) != self.n_pi or self.n_pi < 1:
            raise ValueError("n_pi must be a positive integer")
        if self.tau_n <= 0:
            raise ValueError("tau_n must be positive")
        if self.rabi < 0:
            raise ValueError("rabi must be non-negative")
        if self.final_phase_rule not in FINAL_PHASE_RULES:
            raise ValueError(f"final_phase_rule must be one of {FINAL_PHASE_RULES}")

    @property
    def duration(self) -> float:
        return 2 * self.n_pi * self.tau_n

    def replace(self, **changes) -> "DdrfParams":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return DdrfParams(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_electron_level"] = self.initial_electron_level.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DdrfParams":
        d = dict(d)
        if isinstance(d.get("initial_electron_level"), str):
            d["initial_electron_level"] = ElectronLevel[d["initial_electron_level"]]
        return cls(**d)


@dataclass(frozen=True)
class PhaseSchedule:
    """Unreduced rf phases phi_1 .. phi_{N+1} (rad)."""

    phases: np.ndarray
    phi_tau: float = 0.0
    rule: str = "half"

    def __len__(self) -> int:
        return len(self.phases)

    def reduced(self) -> np.ndarray:
        return np.mod(self.phases, 2 * np.pi)

    def to_json(self, params: DdrfParams | None = None) -> str:
        payload = {"phases": [float(p) for p in self.phases], "phi_tau": float(self.phi_tau),
                   "rule": self.rule}
        if params is not None:
            payload["params"] = params.to_dict()
        return json.dumps(payload)


def calibrate_rabi(n_pi: int, tau_n: float, angle: float) -> float:
    """Rabi amplitude (Hz) giving a branch-relative rotation ``angle`` (rad).

    Each electron branch is driven resonantly for a total time N tau_n, in
    opposite directions, so the relative angle is 2 pi * rabi * 2 N tau_n.
    """
    return angle / (2 * np.pi * 2 * n_pi * tau_n)


def schedule_array(n_pi: int, phi_tau, phi_initial=0.0, rule: str = "half") -> np.ndarray:
    """Phase recursion, vectorised over the leading shape of ``phi_tau``.

    phi_1 = phi_init, phi_2 = phi_1 + phi_tau + pi, phi_{l+2} = phi_l + 2 phi_tau;
    the last phase follows ``rule``:

    * ``half``     phi_{N+1} = phi_{N-1} + phi_tau
    * ``previous`` phi_{N+1} = phi_N + phi_tau
    * ``tracking`` phi_{N+1} = phi_{N-1} + 2 phi_tau (exact frame tracking)
    """
    if n_pi < 1:
        raise ValueError("n_pi must be >= 1")
    if rule not in FINAL_PHASE_RULES:
        raise ValueError(f"unknown final phase rule {rule!r}")
    phi_tau = np.asarray(phi_tau, dtype=float)
    phi_init = np.broadcast_to(np.asarray(phi_initial, dtype=float), phi_tau.shape)
    out = np.empty(phi_tau.shape + (n_pi + 1,))
    out[..., 0] = phi_init
    out[..., 1] = phi_init + phi_tau + np.pi
    for idx in range(2, n_pi):  # phi_3 .. phi_N
        out[..., idx] = out[..., idx - 2] + 2 * phi_tau
    if n_pi >= 2:
        if rule == "half":
            out[..., n_pi] = out[..., n_pi - 2] + phi_tau
        elif rule == "previous":
            out[..., n_pi] = out[..., n_pi - 1] + phi_tau
        else:
            out[..., n_pi] = out[..., n_pi - 2] + 2 * phi_tau
    return out


def phase_schedule(params: DdrfParams, omega1: float, omega2: float) -> PhaseSchedule:
    """Phases for a drive resonant with the |3/2> transition ``omega1``.

    The free-evolution increment is phi_tau = 2 pi (omega2 - omega1) tau_n.
    """
    phi_tau = 2 * np.pi * (omega2 - omega1) * params.tau_n
    phases = schedule_array(params.n_pi, phi_tau, params.phi_initial, params.final_phase_rule)
    return PhaseSchedule(phases, float(phi_tau), params.final_phase_rule)


# ----------------------------------------------------------------------------
# conditional unitaries


@dataclass(frozen=True)
class ConditionalUnitary:
    """Nuclear evolution conditioned on the initial electron level."""

    u_32: np.ndarray
    u_12: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Block operator on (electron (x) nucleus), electron order (|1/2>, |3/2>).

        The electron flips implied by the pi pulses are not included.
        """
        p12 = np.diag([1.0, 0.0]).astype(complex)
        p32 = np.diag([0.0, 1.0]).astype(complex)
        return np.kron(p12, self.u_12) + np.kron(p32, self.u_32)

    def overlap(self) -> complex:
        """Tr(u_12^dag u_32) / d: electron coherence for an unpolarised nucleus."""
        d = self.u_32.shape[-1]
        return np.trace(np.swapaxes(self.u_12.conj(), -1, -2) @ self.u_32, axis1=-2, axis2=-1) / d

    def unitarity_error(self) -> float:
        errs = []
        for u in (self.u_32, self.u_12):
            eye = np.eye(u.shape[-1])
            errs.append(np.max(np.abs(np.swapaxes(u.conj(), -1, -2) @ u - eye)))
        return float(max(errs))


class _Branches:
    """Per-level tilted operators and splittings for a batch of spins."""

    def __init__(self, larmor, a_par, a_perp):
        self.larmor = np.asarray(larmor, dtype=float)
        self.a_par = np.asarray(a_par, dtype=float)
        self.a_perp = np.asarray(a_perp, dtype=float)
        shape = np.broadcast_shapes(self.larmor.shape, self.a_par.shape, self.a_perp.shape)
        self.shape = shape
        self.freq = {}
        self.beta = {}
        self.ops = {}
        for level in (MS32, MS12):
            m = level.ms
            z = np.broadcast_to(self.larmor + m * self.a_par, shape)
            x = np.broadcast_to(m * self.a_perp, shape)
            self.freq[level] = np.hypot(z, x)
            self.beta[level] = np.arctan2(x, z)
            self.ops[level] = tilted_operators(self.beta[level])

    def rotating(self, level, omega, rabi, phase):
        ix, iy, iz = self.ops[level]
        det = (self.freq[level] - omega)[..., None, None]
        amp = (rabi * np.cos(self.beta[level]))[..., None, None]
        phase = np.asarray(phase, dtype=float)[..., None, None]
        return det * iz + amp * (np.cos(phase) * ix + np.sin(phase) * iy)

    def frame(self, level, omega, t, inverse=False):
        """R(t) = exp(+2j pi w t I_z,beta); ``inverse`` gives R^T(t)."""
        iz = self.ops[level][2]
        sign = 1.0 if inverse else -1.0
        return expm2(sign * np.asarray(omega, dtype=float)[..., None, None] * iz, t)


def _segment_level(init: ElectronLevel, k: int) -> ElectronLevel:
    return init if k % 2 == 1 else init.other


def _segment_times(k: int, n_pi: int, tau: float) -> tuple[float, float]:
    if k == 1:
        return 0.0, tau
    if k == n_pi + 1:
        return (2 * k - 3) * tau, 2 * n_pi * tau
    return (2 * k - 3) * tau, (2 * k - 1) * tau


def _segment(br: _Branches, init, k, n_pi, tau, omega, rabi, phase_k, lab_end):
    level = _segment_level(init, k)
    t0, t1 = _segment_times(k, n_pi, tau)
    u = expm2(br.rotating(level, omega, rabi, phase_k), t1 - t0)
    if k > 1:
        u = u @ br.frame(level, omega, t0)
    if k <= n_pi or lab_end:
        u = br.frame(level, omega, t1, inverse=True) @ u
    return u


def ddrf_branches(larmor, a_par, a_perp, n_pi, tau, omega, rabi, phases, frame="lab"):
    """Vectorised DDrf product for both initial electron levels.

    ``phases`` has shape (..., N + 1). Returns (u_32, u_12) stacks. With
    ``frame="rotating"`` the final frame rotation is left off, reproducing
    the bare chronological product of the segment unitaries.
    """
    if frame not in ("lab", "rotating"):
        raise ValueError("frame must be 'lab' or 'rotating'")
    phases = np.asarray(phases, dtype=float)
    if phases.shape[-1] != n_pi + 1:
        raise ValueError("need N + 1 phases")
    shape = np.broadcast_shapes(np.shape(larmor), np.shape(a_par), np.shape(a_perp),
                                np.shape(omega), np.shape(rabi), phases.shape[:-1])
    br = _Branches(*(np.broadcast_to(np.asarray(a, dtype=float), shape)
                     for a in (larmor, a_par, a_perp)))
    omega = np.broadcast_to(np.asarray(omega, dtype=float), br.shape)
    rabi = np.broadcast_to(np.asarray(rabi, dtype=float), br.shape)
    out = []
    for init in (MS32, MS12):
        total = None
        for k in range(1, n_pi + 2):
            seg = _segment(br, init, k, n_pi, tau, omega, rabi, phases[..., k - 1], frame == "lab")
            total = seg if total is None else seg @ total
        out.append(total)
    return out[0], out[1]


def _hv_args(hv: HyperfineVector, species, constants, larmor_hz):
    wl = constants.larmor(species) if larmor_hz is None else float(larmor_hz)
    return wl, hv.a_par, hv.a_perp


def segment_unitary(k: int, params: DdrfParams, hv: HyperfineVector, phase_k: float,
                    species=C13, constants=DEFAULT_CONSTANTS, larmor_hz=None):
    """Lab-frame segment k (1-based) for both initial electron levels.

    Returns a dict keyed by initial level. The last segment omits the
    closing frame rotation, as in the bare segment product.
    """
    n = params.n_pi
    if not 1 <= k <= n + 1:
        raise IndexError(f"segment index {k} outside 1..{n + 1}")
    br = _Branches(*_hv_args(hv, species, constants, larmor_hz))
    return {
        init: _segment(br, init, k, n, params.tau_n, params.omega, params.rabi, phase_k, False)
        for init in (MS32, MS12)
    }


def ddrf_unitary(params: DdrfParams, hv: HyperfineVector, species=C13,
                 constants=DEFAULT_CONSTANTS, larmor_hz=None, phases=None,
                 frame="lab") -> ConditionalUnitary:
    """Conditional nuclear propagator of a full DDrf sequence.

    Phases default to the schedule for a drive resonant with omega1 of this
    spin; pass ``phases`` to reuse another spin's schedule (crosstalk).
    """
    wl, a_par, a_perp = _hv_args(hv, species, constants, larmor_hz)
    if phases is None:
        w1, w2 = transition_frequencies_array(wl, a_par, a_perp)
        phases = phase_schedule(params, float(w1), float(w2)).phases
    u32, u12 = ddrf_branches(wl, a_par, a_perp, params.n_pi, params.tau_n, params.omega,
                             params.rabi, phases, frame)
    return ConditionalUnitary(u32, u12)


# ----------------------------------------------------------------------------
# CPMG


def cpmg_sequence(n_pi: int, first: ElectronLevel):
    """(level, duration-in-units-of-tau) for the N + 1 free-evolution periods."""
    out = []
    for k in range(1, n_pi + 2):
        dur = 1 if k in (1, n_pi + 1) else 2
        out.append((_segment_level(first, k), dur))
    return out


def cpmg_unitary(n_pi: int, tau, h32, h12):
    """CPMG cluster propagators (V_32, V_12) for electron starting in each level.

    ``h32``/``h12`` are Hermitian (..., d, d) cluster Hamiltonians (Hz);
    ``tau`` may be an array, giving a leading time axis on the result.
    Periods run tau, 2 tau, ..., 2 tau, tau with the electron alternating.
    """
    h32 = np.asarray(h32, dtype=complex)
    h12 = np.asarray(h12, dtype=complex)
    if h32.shape != h12.shape or h32.shape[-1] != h32.shape[-2]:
        raise ValueError("cluster Hamiltonians must be square and of equal shape")
    if n_pi < 1:
        raise ValueError("n_pi must be >= 1")
    tau = np.asarray(tau, dtype=float)
    tshape = tau.shape
    t = tau.reshape(tshape + (1,) * (h32.ndim - 2))

    w, v = {}, {}
    for level, h in ((MS32, h32), (MS12, h12)):
        w[level], v[level] = np.linalg.eigh(h)

    def prop(level, mult):
        ph = np.exp(-2j * np.pi * (mult * t)[..., None] * w[level])
        vl = v[level]
        return (vl * ph[..., None, :]) @ np.swapaxes(vl.conj(), -1, -2)

    result = []
    for first in (MS32, MS12):
        second = first.other
        head = prop(first, 1)
        # middle periods k = 2..N alternate second, first, second, ...
        n_mid = n_pi - 1
        pair = prop(first, 2) @ prop(second, 2)
        body = np.linalg.matrix_power(pair, n_mid // 2) if n_mid >= 2 else None
        total = head if body is None else body @ head
        if n_mid % 2 == 1:
            total = prop(second, 2) @ total
        last_level = _segment_level(first, n_pi + 1)
        total = prop(last_level, 1) @ total
        result.append(total)
    return result[0], result[1]


# ----------------------------------------------------------------------------
# electron pulses


def electron_pulse(kind: str, phase: float = 0.0) -> np.ndarray:
    """Ideal SU(2) rotation on the (|1/2>, |3/2>) electron pseudo-qubit.

    ``kind`` is one of ``pi_x``, ``pi_y``, ``pi_half`` (axis at ``phase``
    in the x-y plane), ``pi_x_half`` or ``pi_y_half``.
    """
    if kind == "pi_x":
        axis, angle = 0.0, np.pi
    elif kind == "pi_y":
        axis, angle = np.pi / 2, np.pi
    elif kind == "pi_half":
        axis, angle = phase, np.pi / 2
    elif kind == "pi_x_half":
        axis, angle = 0.0, np.pi / 2
    elif kind == "pi_y_half":
        axis, angle = np.pi / 2, np.pi / 2
    else:
        raise ValueError(f"unknown electron pulse {kind!r}")
    gen = np.cos(axis) * PAULI_X + np.sin(axis) * PAULI_Y
    return math.cos(angle / 2) * np.eye(2) - 1j * math.sin(angle / 2) * gen
