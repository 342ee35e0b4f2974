"""Readout contrast, spectra, contrast maps and the register census.

The detection sequence is pi_y/2 on the electron, a DDrf block, then a
pi_phi/2 readout pulse. With the nuclei unpolarised, the only quantity that
matters is the branch overlap c = Tr(u_12^dag u_32) / 2 per spin; spins are
independent, so the bath overlap is the product of the single-spin ones.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sicqmn.lattice import (
    C13,
    GAMMA_MHZ_PER_T,
    SI29,
    IsotopeConfig,
    LatticeSpec,
    SpinBath,
    generate_supercell,
    sample_bath,
)
from sicqmn.physics import (
    DEFAULT_CONSTANTS,
    HyperfineVector,
    hyperfine_components,
    transition_frequencies_array,
)
from sicqmn.pulses import DdrfParams, ddrf_branches, electron_pulse, schedule_array

P_GE_MAX = 30


def branch_overlap(u_32, u_12) -> np.ndarray:
    """Tr(u_12^dag u_32) / d over a stack of conditional unitaries."""
    d = u_32.shape[-1]
    return np.einsum("...ij,...ij->...", u_12.conj(), u_32) / d


def _bath_arrays(bath: SpinBath, constants=DEFAULT_CONSTANTS):
    """(larmor, a_par, a_perp, r) arrays for every spin in ``bath``."""
    if len(bath) == 0:
        z = np.zeros(0)
        return z, z, z, z
    gam = bath.gamma
    hf = hyperfine_components(bath.positions, gam, constants)
    larmor = gam * 1e6 * constants.b0
    return larmor, hf[:, 0], np.hypot(hf[:, 1], hf[:, 2]), np.linalg.norm(bath.positions, axis=1)


def own_resonance_overlaps(larmor, a_par, a_perp, n_pi, tau, rabi, phi_initial=0.0,
                           rule="half"):
    """Overlap of each spin driven at its own omega1 with its own phase schedule."""
    w1, w2 = transition_frequencies_array(larmor, a_par, a_perp)
    phases = schedule_array(n_pi, 2 * np.pi * (w2 - w1) * tau, phi_initial, rule)
    u32, u12 = ddrf_branches(larmor, a_par, a_perp, n_pi, tau, w1, rabi, phases)
    return branch_overlap(u32, u12), w1, w2


# ----------------------------------------------------------------------------
# readout


@dataclass(frozen=True)
class ReadoutSignal:
    """|3/2> population versus readout phase."""

    phases: np.ndarray
    p_32: np.ndarray

    def __post_init__(self):
        if len(self.phases) != len(self.p_32):
            raise ValueError("phases and populations differ in length")

    @property
    def amplitude(self) -> float:
        """Oscillation half-amplitude from the first Fourier harmonic.

        Exact for a uniform grid because the signal is a pure cos(phi - phi0).
        """
        return float(2 * abs(np.mean(self.p_32 * np.exp(-1j * self.phases))))

    @property
    def contrast(self) -> float:
        return float(np.clip(1 - 2 * self.amplitude, 0.0, 1.0))


def readout_from_overlap(overlap: complex, n_pi: int, n_phases: int = 36) -> ReadoutSignal:
    """Electron readout given the total bath overlap and the pi-pulse count."""
    if n_phases < 24:
        raise ValueError("use at least 24 readout phases")
    phis = 2 * np.pi * np.arange(n_phases) / n_phases
    # electron coherence after pi_y/2 and the conditional evolution
    rho = np.array([[0.5, 0.5 * np.conj(overlap)], [0.5 * overlap, 0.5]], dtype=complex)
    flip = np.linalg.matrix_power(electron_pulse("pi_x"), n_pi)
    rho = flip @ rho @ flip.conj().T
    p = np.empty(n_phases)
    for i, phi in enumerate(phis):
        r = electron_pulse("pi_half", phi)
        p[i] = (r @ rho @ r.conj().T)[1, 1].real
    return ReadoutSignal(phis, np.clip(p, 0.0, 1.0))


def readout_signal(bath: SpinBath, params: DdrfParams, constants=DEFAULT_CONSTANTS,
                   phases=None, n_phases: int = 36) -> ReadoutSignal:
    """Readout sweep for a whole bath driven by ``params``.

    ``phases`` defaults to the schedule computed for a drive resonant with
    omega1 of the first spin (or zero detuning for an empty bath).
    """
    larmor, a_par, a_perp, _ = _bath_arrays(bath, constants)
    if phases is None:
        if len(bath):
            w1, w2 = transition_frequencies_array(larmor[0], a_par[0], a_perp[0])
            phi_tau = 2 * np.pi * (w2 - w1) * params.tau_n
        else:
            phi_tau = 0.0
        phases = schedule_array(params.n_pi, phi_tau, params.phi_initial, params.final_phase_rule)
    total = 1.0 + 0j
    if len(bath):
        u32, u12 = ddrf_branches(larmor, a_par, a_perp, params.n_pi, params.tau_n,
                                 params.omega, params.rabi, phases)
        total = complex(np.prod(branch_overlap(u32, u12)))
    return readout_from_overlap(total, params.n_pi, n_phases)


def contrast(hv: HyperfineVector, params: DdrfParams, species=C13, constants=DEFAULT_CONSTANTS,
             larmor_hz=None, phases=None) -> float:
    """Single-spin contrast 1 - |Tr(u_12^dag u_32)| / 2.

    Phases default to this spin's own schedule for a drive at ``params.omega``
    treated as its omega1.
    """
    wl = constants.larmor(species) if larmor_hz is None else float(larmor_hz)
    if phases is None:
        w1, w2 = transition_frequencies_array(wl, hv.a_par, hv.a_perp)
        phases = schedule_array(params.n_pi, 2 * np.pi * (w2 - w1) * params.tau_n,
                                params.phi_initial, params.final_phase_rule)
    u32, u12 = ddrf_branches(wl, hv.a_par, hv.a_perp, params.n_pi, params.tau_n, params.omega,
                             params.rabi, phases)
    return float(np.clip(1 - abs(branch_overlap(u32, u12)), 0.0, 1.0))


# ----------------------------------------------------------------------------
# spectrum


def _hypothesis_phi_tau(omega, tau, larmor_abs):
    """phi_tau for a drive at ``omega`` under the two resonance hypotheses.

    An on-axis spin resonant on its |3/2> line at omega has
    omega2 - omega1 = -2/3 (omega - L); resonant on its |1/2> line it has
    omega1 - omega2 = 2 (omega - L).
    """
    det = omega - larmor_abs
    return 2 * np.pi * (-2.0 / 3.0) * det * tau, 2 * np.pi * 2.0 * det * tau


def spectrum(bath: SpinBath, omega_grid, params: DdrfParams, constants=DEFAULT_CONSTANTS,
             chunk: int = 64, window_hz=None) -> np.ndarray:
    """Bath contrast versus drive frequency, as an (G, 2) array of (omega, contrast).

    ``params.omega`` is ignored. For each grid point the phase schedule is
    built for an on-axis spin of the species whose Larmor frequency is
    closest, assuming resonance on either electron branch; the larger
    contrast of the two is reported.

    With ``window_hz`` set, spins whose lines are all farther than that from a
    grid point use their undriven overlap there. This is only approximate:
    the phase jumps put drive sidebands at multiples of 1 / (2 tau), so even
    a 50 kHz window leaves errors near 1e-2. The default None is exact.
    """
    grid = np.asarray(omega_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty frequency grid")
    out = np.zeros((grid.size, 2))
    out[:, 0] = grid
    if len(bath) == 0:
        return out
    larmor, a_par, a_perp, _ = _bath_arrays(bath, constants)
    w1, w2 = transition_frequencies_array(larmor, a_par, a_perp)
    if window_hz is not None:
        zero = np.zeros(params.n_pi + 1)
        u32, u12 = ddrf_branches(larmor, a_par, a_perp, params.n_pi, params.tau_n, 0.0, 0.0, zero)
        background = branch_overlap(u32, u12)
    refs = np.array([abs(constants.larmor(C13)), abs(constants.larmor(SI29))])
    for start in range(0, grid.size, chunk):
        w = grid[start:start + chunk]
        if window_hz is None:
            cols = np.arange(len(bath))
            far = np.ones(w.size, dtype=complex)
        else:
            near = (np.abs(w[:, None] - w1[None, :]) < window_hz) | \
                   (np.abs(w[:, None] - w2[None, :]) < window_hz)
            cols = np.nonzero(near.any(axis=0))[0]
            far = np.prod(np.where(near, 1.0, background[None, :]), axis=1)
        ref = refs[np.argmin(np.abs(w[:, None] - refs[None, :]), axis=1)]
        best = np.zeros(w.size)
        for phi_tau in _hypothesis_phi_tau(w, params.tau_n, ref):
            total = far
            if cols.size:
                ph = schedule_array(params.n_pi, phi_tau, params.phi_initial,
                                    params.final_phase_rule)
                u32, u12 = ddrf_branches(larmor[None, cols], a_par[None, cols], a_perp[None, cols],
                                         params.n_pi, params.tau_n, w[:, None], params.rabi,
                                         ph[:, None, :])
                ov = branch_overlap(u32, u12)
                if window_hz is not None:
                    ov = np.where(near[:, cols], ov, 1.0)
                total = total * np.prod(ov, axis=1)
            best = np.maximum(best, 1 - np.abs(total))
        out[start:start + chunk, 1] = np.clip(best, 0.0, 1.0)
    return out


# ----------------------------------------------------------------------------
# contrast map


@dataclass(frozen=True)
class ContrastMapPoint:
    r: float
    theta: float
    contrast: float


def contrast_map_array(species, params: DdrfParams, r_grid, theta_grid, azimuth: float = 0.0,
                       constants=DEFAULT_CONSTANTS) -> np.ndarray:
    """(len(r), len(theta)) best-case contrast, each spin driven at its own omega1."""
    r = np.asarray(r_grid, dtype=float)
    th = np.asarray(theta_grid, dtype=float)
    if np.any(r <= 0.1):
        raise ValueError("map radii must exceed 0.1 nm")
    rr, tt = np.meshgrid(r, th, indexing="ij")
    pos = np.stack([rr * np.sin(tt) * np.cos(azimuth), rr * np.sin(tt) * np.sin(azimuth),
                    rr * np.cos(tt)], axis=-1).reshape(-1, 3)
    gamma = GAMMA_MHZ_PER_T.get(species, species)
    hf = hyperfine_components(pos, gamma, constants)
    wl = constants.larmor(gamma)
    ov, _, _ = own_resonance_overlaps(wl, hf[:, 0], np.hypot(hf[:, 1], hf[:, 2]), params.n_pi,
                                      params.tau_n, params.rabi, params.phi_initial,
                                      params.final_phase_rule)
    return np.clip(1 - np.abs(ov), 0.0, 1.0).reshape(rr.shape)


def contrast_map(species, params: DdrfParams, r_grid, theta_grid, azimuth: float = 0.0,
                 constants=DEFAULT_CONSTANTS) -> list[ContrastMapPoint]:
    vals = contrast_map_array(species, params, r_grid, theta_grid, azimuth, constants)
    return [
        ContrastMapPoint(float(r), float(t), float(vals[i, j]))
        for i, r in enumerate(r_grid)
        for j, t in enumerate(theta_grid)
    ]


# ----------------------------------------------------------------------------
# census


@dataclass(frozen=True)
class CensusParams:
    """Sequence and selection rules for counting accessible qubits.

    The Rabi amplitude is ``rotation_multiple / (4 N tau_n)``: an odd multiple
    gives a branch-relative rotation of ``rotation_multiple * pi``, i.e. full
    contrast for an ideally addressed spin. A fixed ``rabi_hz`` overrides
    this rule. ``delta_f`` defaults to the
    sequence linewidth 1 / (2 N tau_n).
    """

    n_pi: int = 100
    tau_n: float = 93e-6
    rotation_multiple: float = 1.0
    contrast_threshold: float = 0.5
    delta_f: float | None = None
    prune_contrast: float = 0.01
    final_phase_rule: str = "half"
    rabi_hz: float | None = None

    def __post_init__(self):
        if self.rabi_hz is not None and self.rabi_hz <= 0:
            raise ValueError("rabi_hz must be positive")
        if self.n_pi < 1 or self.tau_n <= 0 or self.rotation_multiple <= 0:
            raise ValueError("n_pi, tau_n and rotation_multiple must be positive")
        if not 0 < self.contrast_threshold < 1:
            raise ValueError("contrast_threshold must lie in (0, 1)")
        if self.delta_f is not None and self.delta_f < 0:
            raise ValueError("delta_f must be non-negative")

    @property
    def rabi(self) -> float:
        if self.rabi_hz is not None:
            return self.rabi_hz
        return self.rotation_multiple / (4 * self.n_pi * self.tau_n)

    @property
    def resolution(self) -> float:
        return 1 / (2 * self.n_pi * self.tau_n) if self.delta_f is None else self.delta_f

    @property
    def label(self) -> str:
        return f"N{self.n_pi}_tau{self.tau_n * 1e6:g}us"


@dataclass(frozen=True)
class QubitRecord:
    index: int
    species: str
    omega1: float
    omega2: float
    contrast: float


@dataclass(frozen=True)
class RealizationCensus:
    """Outcome for one bath: criterion-(i) spins and spins passing both."""

    sensed: tuple
    accessible: tuple
    n_spins: int

    @property
    def n_sensed(self) -> int:
        return len(self.sensed)

    @property
    def n_accessible(self) -> int:
        return len(self.accessible)


def _conflicts(cand, lines_w1, lines_w2, pool, width):
    """Boolean per candidate: another pool spin has a line within ``width``."""
    owners = np.concatenate([pool, pool])
    lines = np.concatenate([lines_w1[pool], lines_w2[pool]])
    order = np.argsort(lines, kind="stable")
    lines, owners = lines[order], owners[order]
    bad = np.zeros(len(cand), dtype=bool)
    for which in (lines_w1, lines_w2):
        x = which[cand]
        lo = np.searchsorted(lines, x - width, side="left")
        hi = np.searchsorted(lines, x + width, side="right")
        for i in np.nonzero(hi - lo > 0)[0]:
            if np.any(owners[lo[i]:hi[i]] != cand[i]):
                bad[i] = True
    return bad


def accessible_qubits(bath: SpinBath, params: CensusParams = CensusParams(),
                      constants=DEFAULT_CONSTANTS) -> RealizationCensus:
    """Apply criterion (i) (contrast above threshold at own resonance) and
    criterion (ii) (no other spin line within the resolution window)."""
    if len(bath) == 0:
        return RealizationCensus((), (), 0)
    larmor, a_par, a_perp, r = _bath_arrays(bath, constants)
    ov, w1, w2 = own_resonance_overlaps(larmor, a_par, a_perp, params.n_pi, params.tau_n,
                                        params.rabi, 0.0, params.final_phase_rule)
    con = np.clip(1 - np.abs(ov), 0.0, 1.0)
    cand = np.nonzero(con > params.contrast_threshold)[0]
    records = lambda idx: tuple(
        QubitRecord(int(i), str(bath.species[i]), float(w1[i]), float(w2[i]), float(con[i]))
        for i in idx
    )
    if cand.size == 0:
        return RealizationCensus((), (), len(bath))
    radius = r[cand].max()
    pool = np.nonzero((con >= params.prune_contrast) | (r <= radius))[0]
    bad = _conflicts(cand, w1, w2, pool, params.resolution)
    return RealizationCensus(records(cand), records(cand[~bad]), len(bath))


@dataclass
class CensusResult:
    """Per-realization outcomes and aggregates for one (concentration, params)."""

    concentration: float
    params: CensusParams
    realizations: list = field(default_factory=list)

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.n_accessible for r in self.realizations], dtype=int)

    @property
    def sensed_counts(self) -> np.ndarray:
        return np.array([r.n_sensed for r in self.realizations], dtype=int)

    @property
    def mean(self) -> float:
        return float(self.counts.mean()) if self.realizations else 0.0

    @property
    def mean_sensed(self) -> float:
        return float(self.sensed_counts.mean()) if self.realizations else 0.0

    def histogram(self) -> np.ndarray:
        c = self.counts
        return np.bincount(c, minlength=P_GE_MAX + 1) if c.size else np.zeros(P_GE_MAX + 1, int)

    def p_ge(self, kmax: int = P_GE_MAX) -> np.ndarray:
        """P(count >= k) for k = 1..kmax."""
        c = self.counts
        if c.size == 0:
            return np.zeros(kmax)
        return np.array([(c >= k).mean() for k in range(1, kmax + 1)])

    def summary(self) -> dict:
        return {
            "concentration": self.concentration,
            "params": self.params.label,
            "n_realizations": len(self.realizations),
            "mean": self.mean,
            "mean_sensed": self.mean_sensed,
            "histogram": self.histogram().tolist(),
            "p_ge": self.p_ge().tolist(),
        }


def realization_seed(master_seed: int, conc_index: int, realization: int) -> int:
    """Counter-based per-realization seed; independent of scheduling order."""
    ss = np.random.SeedSequence([int(master_seed), int(conc_index), int(realization)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@functools.lru_cache(maxsize=4)
def _sites(spec: LatticeSpec, volume: float):
    return generate_supercell(spec, volume)


def census_campaign(concentrations, n_realizations: int, params_list=(CensusParams(),),
                    master_seed: int = 0, volume: float = 680.0, threads: int = 1,
                    spec: LatticeSpec = LatticeSpec(), constants=DEFAULT_CONSTANTS):
    """Census over (total concentration, realization) for each parameter set.

    Each entry of ``concentrations`` is either a total fraction, split with
    ``concentration_pair``, or an explicit (c13, si29) pair. Returns a list
    of CensusResult ordered by concentration then parameter set. The same
    bath realization is shared across parameter sets.
    """
    from sicqmn.lattice import concentration_pair

    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    params_list = tuple(params_list)
    sites = _sites(spec, float(volume))

    def job(args):
        ci, conc, k = args
        c13, si29 = conc if isinstance(conc, tuple) else concentration_pair(conc)
        cfg = IsotopeConfig(c13, si29, realization_seed(master_seed, ci, k))
        bath = sample_bath(sites, cfg)
        return [accessible_qubits(bath, p, constants) for p in params_list]

    concs = [tuple(c) if isinstance(c, (list, tuple)) else float(c) for c in concentrations]
    tasks = [(ci, c, k) for ci, c in enumerate(concs) for k in range(n_realizations)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(job, tasks))
    else:
        outs = [job(t) for t in tasks]

    results = []
    for ci, c in enumerate(concs):
        total = sum(c) if isinstance(c, tuple) else c
        for pi, p in enumerate(params_list):
            res = CensusResult(total, p)
            res.realizations = [outs[ci * n_realizations + k][pi] for k in range(n_realizations)]
            results.append(res)
    return results


# ----------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_spectrum_csv(path, data) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega_hz", "contrast"])
        for om, c in data:
            w.writerow([_fmt(om), _fmt(c)])


def write_map_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r_nm", "theta_rad", "contrast"])
        for p in points:
            w.writerow([_fmt(p.r), _fmt(p.theta), _fmt(p.contrast)])


CENSUS_K = tuple(range(6, 13))


def write_census_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["concentration", "params", "mean", "mean_sensed"]
                   + [f"p_ge_{k}" for k in CENSUS_K])
        for res in results:
            p = res.p_ge()
            w.writerow([_fmt(res.concentration), res.params.label, _fmt(res.mean),
                        _fmt(res.mean_sensed)] + [_fmt(p[k - 1]) for k in CENSUS_K])


def write_census_json(path, results) -> None:
    with open(path, "w") as fh:
        json.dump([r.summary() for r in results], fh, indent=1, sort_keys=True)
