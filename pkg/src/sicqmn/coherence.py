"""CCE-1 / CCE-2 electron coherence under CPMG and T2 extraction.

A cluster factor is <psi| V_12^dag V_32 |psi> for a bath product state psi,
with V_m the CPMG propagator for the electron starting in level m. Pair
factors are normalised by their two singles. The total coherence is averaged
over random +-z product states of the bath.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from sicqmn.fitting import NoDecayError, StretchedExponentialDecay
from sicqmn.lattice import (
    IsotopeConfig,
    LatticeSpec,
    SpinBath,
    concentration_pair,
    generate_supercell,
    sample_bath,
)
from sicqmn.physics import (
    DEFAULT_CONSTANTS,
    SX,
    SY,
    SZ,
    ElectronLevel,
    dipolar_prefactor,
    hyperfine_components,
)
from sicqmn.pulses import cpmg_unitary

log = logging.getLogger(__name__)

MS32 = ElectronLevel.MS_3_2
MS12 = ElectronLevel.MS_1_2
_OPS = (SX, SY, SZ)
_EYE2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class BathPairCoupling:
    """Nuclear-nuclear dipolar tensor (Hz) between spins l and k."""

    a_lk: np.ndarray

    @classmethod
    def between(cls, pos_l, pos_k, gamma_l, gamma_k, constants=DEFAULT_CONSTANTS):
        """Point-dipole tensor prefactor * (delta_ij - 3 n_i n_j) / r^3.

        Positions in nm, gyromagnetic ratios in MHz/T.
        """
        d = np.asarray(pos_k, dtype=float) - np.asarray(pos_l, dtype=float)
        r = np.linalg.norm(d)
        if r == 0:
            raise ValueError("coincident nuclear positions")
        n = d / r
        pref = dipolar_prefactor(gamma_l * 1e6, gamma_k * 1e6, constants) / (r * 1e-9) ** 3
        return cls(pref * (np.eye(3) - 3 * np.outer(n, n)))


@dataclass(frozen=True)
class CoherenceCurve:
    times: np.ndarray  # total evolution time 2 N tau (s)
    l_values: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_seconds", "abs_L", "re_L", "im_L"])
            for t, v in zip(self.times, self.l_values):
                w.writerow([format(float(t), ".17g"), format(float(abs(v)), ".17g"),
                            format(float(v.real), ".17g"), format(float(v.imag), ".17g")])


@dataclass(frozen=True)
class T2Fit:
    t2: float
    stretch_exponent: float
    residual: float

    def to_json(self) -> str:
        return json.dumps({"t2_s": self.t2, "stretch_n": self.stretch_exponent,
                           "residual": self.residual})


def _single_hamiltonians(hf, larmor, level):
    """(K, 2, 2) single-spin Hamiltonians with the full hyperfine row."""
    m = level.ms
    return ((larmor + m * hf[:, 0])[:, None, None] * SZ
            + (m * hf[:, 1])[:, None, None] * SX
            + (m * hf[:, 2])[:, None, None] * SY)


def _pair_hamiltonians(h_l, h_k, tensors):
    """(P, 4, 4) from single Hamiltonians and (P, 3, 3) dipolar tensors."""
    h = np.einsum("pab,cd->pacbd", h_l, _EYE2) + np.einsum("ab,pcd->pacbd", _EYE2, h_k)
    h = h.reshape(-1, 4, 4)
    for i, oi in enumerate(_OPS):
        for j, oj in enumerate(_OPS):
            h = h + tensors[:, i, j, None, None] * np.kron(oi, oj)
    return h


def _pair_tensors(pos, gam, pairs, constants):
    d = pos[pairs[:, 1]] - pos[pairs[:, 0]]
    r = np.linalg.norm(d, axis=1)
    n = d / r[:, None]
    pref = dipolar_prefactor(gam[pairs[:, 0]] * 1e6, gam[pairs[:, 1]] * 1e6, constants)
    pref = pref / (r * 1e-9) ** 3
    return pref[:, None, None] * (np.eye(3)[None] - 3 * n[:, :, None] * n[:, None, :])


def pair_hamiltonian(l: int, k: int, bath: SpinBath, level: ElectronLevel,
                     constants=DEFAULT_CONSTANTS) -> np.ndarray:
    """4x4 pair Hamiltonian (Hz) with the electron in ``level``; spin l first."""
    if l == k:
        raise ValueError("pair needs two distinct spins")
    pos = bath.positions[[l, k]]
    gam = bath.gamma[[l, k]]
    hf = hyperfine_components(pos, gam, constants)
    h1 = _single_hamiltonians(hf, gam * 1e6 * constants.b0, level)
    tens = _pair_tensors(pos, gam, np.array([[0, 1]]), constants)
    return _pair_hamiltonians(h1[:1], h1[1:], tens)[0]


def select_pairs(bath: SpinBath, hf, cutoff_nm: float = 2.0, hf_min_hz: float = 1e3):
    """Pairs with separation <= cutoff, or with both |A| above ``hf_min_hz``."""
    n = len(bath)
    if n < 2:
        return np.zeros((0, 2), dtype=int)
    tree = cKDTree(bath.positions)
    near = tree.query_pairs(cutoff_nm, output_type="ndarray")
    strong = np.nonzero(np.linalg.norm(hf, axis=1) > hf_min_hz)[0]
    extra = np.array([(a, b) for ii, a in enumerate(strong) for b in strong[ii + 1:]],
                     dtype=int).reshape(-1, 2)
    allp = np.concatenate([near.reshape(-1, 2), extra])
    allp = np.sort(allp, axis=1)
    return np.unique(allp, axis=0) if len(allp) else allp


def _cluster_diagonals(h32, h12, n_pi, tau):
    """diag(V_12^dag V_32) over the tau grid: (T, C, d)."""
    v32, v12 = cpmg_unitary(n_pi, tau, h32, h12)
    return np.einsum("...ji,...ji->...i", v12.conj(), v32)


def _product_state_indices(states, pairs):
    """Index into the 4-dim pair basis (|up,up>, |up,dn>, |dn,up>, |dn,dn>)."""
    return 2 * states[:, pairs[:, 0]] + states[:, pairs[:, 1]]


def cce_coherence(bath: SpinBath, n_pi: int, tau_grid, order: int = 2,
                  constants=DEFAULT_CONSTANTS, n_bathstates: int = 5, seed: int = 0,
                  pair_cutoff_nm: float = 2.0, pair_hf_min_hz: float = 1e3,
                  denominator_floor: float = 1e-6, states=None,
                  pair_chunk: int = 4096) -> CoherenceCurve:
    """CPMG coherence L(t) at t = 2 N tau from CCE of the given order.

    ``states`` optionally fixes the bath product states as an (S, K) array of
    0 (spin up) / 1 (spin down); otherwise ``n_bathstates`` are drawn from
    ``seed``. The result is averaged over states.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or np.any(np.diff(tau) < 0):
        raise ValueError("tau_grid must be a sorted 1-d array")
    times = 2 * n_pi * tau
    k = len(bath)
    if k == 0:
        return CoherenceCurve(times, np.ones(tau.size, dtype=complex))

    if states is None:
        rng = np.random.default_rng(seed)
        states = rng.integers(0, 2, size=(n_bathstates, k))
    states = np.asarray(states, dtype=int)
    if states.ndim != 2 or states.shape[1] != k:
        raise ValueError("states must have shape (S, K)")

    gam = bath.gamma
    hf = hyperfine_components(bath.positions, gam, constants)
    larmor = gam * 1e6 * constants.b0
    h32 = _single_hamiltonians(hf, larmor, MS32)
    h12 = _single_hamiltonians(hf, larmor, MS12)
    single = _cluster_diagonals(h32, h12, n_pi, tau)  # (T, K, 2)
    idx = np.arange(k)
    # (T, S, K) single factors for each state
    s_fac = single[:, idx[None, :], states]
    total = np.prod(s_fac, axis=2)

    if order == 2:
        pairs = select_pairs(bath, hf, pair_cutoff_nm, pair_hf_min_hz)
        n_guard = 0
        # chunked so (T, P, 4, 4) propagators stay small for large baths
        for start in range(0, len(pairs), pair_chunk):
            pc = pairs[start:start + pair_chunk]
            tens = _pair_tensors(bath.positions, gam, pc, constants)
            p32 = _pair_hamiltonians(h32[pc[:, 0]], h32[pc[:, 1]], tens)
            p12 = _pair_hamiltonians(h12[pc[:, 0]], h12[pc[:, 1]], tens)
            pair_diag = _cluster_diagonals(p32, p12, n_pi, tau)  # (T, P, 4)
            pidx = _product_state_indices(states, pc)  # (S, P)
            p_fac = pair_diag[:, np.arange(len(pc))[None, :], pidx]
            den = s_fac[:, :, pc[:, 0]] * s_fac[:, :, pc[:, 1]]
            small = np.abs(den) < denominator_floor
            n_guard += int(small.sum())
            ratio = np.where(small, 1.0, p_fac / np.where(small, 1.0, den))
            total = total * np.prod(ratio, axis=2)
        if n_guard:
            log.info("pair denominator guard triggered for %d entries", n_guard)
    return CoherenceCurve(times, total.mean(axis=1))


def fit_t2(curve: CoherenceCurve, max_extrapolation: float = 10.0, **kwargs) -> T2Fit:
    """Stretched-exponential fit of |L(t)|.

    Raises NoDecayError if the curve stays flat or the fitted T2 lies more
    than ``max_extrapolation`` times beyond the sampled window (a modulation
    dip mistaken for decay).
    """
    est = StretchedExponentialDecay(**kwargs)
    try:
        est.fit(curve.times, np.abs(curve.l_values))
    except NoDecayError as exc:
        raise NoDecayError(str(exc), curve) from None
    if est.t2_ > max_extrapolation * np.max(curve.times):
        raise NoDecayError(f"fitted T2 {est.t2_:.3g} s far outside the sampled window", curve)
    return T2Fit(est.t2_, est.n_, est.residual_)


def local_bath(concentration, radius_nm: float, seed: int, spec: LatticeSpec = LatticeSpec()):
    """Sampled bath within ``radius_nm`` of the defect.

    ``concentration`` is a total fraction or a (c13, si29) pair.
    """
    c13, si29 = (concentration if isinstance(concentration, tuple)
                 else concentration_pair(concentration))
    sites = _sites_for_radius(spec, radius_nm)
    return sample_bath(sites, IsotopeConfig(c13, si29, seed)).within(radius_nm)


_SITE_CACHE: dict = {}


def _sites_for_radius(spec, radius_nm):
    key = (spec, round(radius_nm, 9))
    if key not in _SITE_CACHE:
        _SITE_CACHE[key] = generate_supercell(spec, (2 * radius_nm + 0.01) ** 3)
    return _SITE_CACHE[key]


def default_tau_grid(n_pi: int, t_max: float = 0.5, points: int = 60) -> np.ndarray:
    """Log-spaced tau grid with total times up to ``t_max``."""
    return np.geomspace(t_max / 2e3, t_max, points) / (2 * n_pi)


def coherence_vs_concentration(concentrations, n_distributions: int = 5, n_bathstates: int = 5,
                               n_pi: int = 1, constants=DEFAULT_CONSTANTS, radius_nm: float = 8.0,
                               tau_grid=None, master_seed: int = 0, order: int = 2,
                               pair_cutoff_nm: float = 2.0, pair_hf_min_hz: float = 1e3):
    """Median fitted T2 per concentration over random spatial baths.

    Returns a list of (concentration, median T2 or nan). Baths whose
    coherence never decays in the window are skipped with a warning.
    """
    if n_distributions < 1 or n_bathstates < 1 or n_pi < 1:
        raise ValueError("counts must be >= 1")
    tau = default_tau_grid(n_pi) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    out = []
    for ci, conc in enumerate(concentrations):
        t2s = []
        for d in range(n_distributions):
            ss = np.random.SeedSequence([int(master_seed), ci, d])
            bath_seed, state_seed = (int(x) for x in ss.generate_state(2, dtype=np.uint64))
            bath = local_bath(conc, radius_nm, bath_seed)
            curve = cce_coherence(bath, n_pi, tau, order, constants, n_bathstates,
                                  state_seed % 2**63, pair_cutoff_nm, pair_hf_min_hz)
            try:
                t2s.append(fit_t2(curve).t2)
            except NoDecayError:
                warnings.warn(f"no decay at concentration {conc}, distribution {d}",
                              RuntimeWarning, stacklevel=2)
        total = float(sum(conc)) if isinstance(conc, tuple) else float(conc)
        out.append((total, float(np.median(t2s)) if t2s else math.nan))
    return out
