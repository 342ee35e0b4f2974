"""Hyperfine couplings and conditional nuclear Hamiltonians.

All frequencies are in Hz (cycles per second); propagators elsewhere use
``exp(-2j*pi*H*t)``. The electron lives in the {|3/2>, |1/2>} pseudo-qubit,
so a nuclear spin sees one of two conditional Hamiltonians

    H_m = w_L I_z + m (A_par I_z + A_perp I_x),    m in {3/2, 1/2}

with w_L = gamma_n * B0 signed (negative for 29Si). The hyperfine vector
is rotated about z so its transverse part lies along x.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from sicqmn.lattice import C13, GAMMA_MHZ_PER_T, SI29

__all__ = [
    "C13",
    "SI29",
    "ElectronLevel",
    "HyperfineVector",
    "PhysicalConstants",
    "SX",
    "SY",
    "SZ",
    "conditional_hamiltonian",
    "dipolar_prefactor",
    "hyperfine_components",
    "hyperfine_vector",
    "rotating_frame_hamiltonian",
    "tilt_angle",
    "transition_frequencies",
]

# spin-1/2 operators
SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)

MU0 = 4e-7 * math.pi
PLANCK = 6.62607015e-34


class ElectronLevel(enum.Enum):
    MS_3_2 = 1.5
    MS_1_2 = 0.5

    @property
    def ms(self) -> float:
        return self.value

    @property
    def other(self) -> "ElectronLevel":
        return ElectronLevel.MS_1_2 if self is ElectronLevel.MS_3_2 else ElectronLevel.MS_3_2


@dataclass(frozen=True)
class PhysicalConstants:
    """Field and coupling constants.

    ``zfs_hz`` and the electron Zeeman term are carried for reference only;
    they are diagonal in the electron basis and never enter the nuclear
    dynamics.
    """

    b0: float = 0.05  # T
    gamma_e: float = 28.02e9  # Hz/T, g = 2.00
    mu0: float = MU0
    h: float = PLANCK
    zfs_hz: float = 35e6

    def __post_init__(self):
        if self.b0 <= 0:
            raise ValueError("B0 must be positive")

    @property
    def hbar(self) -> float:
        return self.h / (2 * math.pi)

    @property
    def electron_zeeman_hz(self) -> float:
        return self.gamma_e * self.b0

    def larmor(self, species_or_gamma) -> float:
        """Signed nuclear Larmor frequency gamma_n * B0 in Hz."""
        gamma = GAMMA_MHZ_PER_T.get(species_or_gamma, species_or_gamma)
        return float(gamma) * 1e6 * self.b0


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class HyperfineVector:
    """Secular hyperfine components A_zz, A_xz, A_yz in Hz."""

    a_par: float
    a_xz: float = 0.0
    a_yz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a_par, self.a_xz, self.a_yz)):
            raise ValueError("hyperfine components must be finite")

    @property
    def a_perp(self) -> float:
        return math.hypot(self.a_xz, self.a_yz)


def dipolar_prefactor(gamma1_hz_t, gamma2_hz_t, constants=DEFAULT_CONSTANTS):
    """(mu0/4pi) h g1 g2 in Hz m^3 for gyromagnetic ratios in Hz/T."""
    return constants.mu0 / (4 * math.pi) * constants.h * gamma1_hz_t * gamma2_hz_t


def hyperfine_components(positions_nm, gamma_n_mhz_t, constants=DEFAULT_CONSTANTS):
    """Vectorised point-dipole couplings.

    Returns an (K, 3) array of (A_zz, A_xz, A_yz) in Hz from the tensor
    prefactor * (3 n_i n_j - delta_ij) / r^3.
    """
    pos = np.asarray(positions_nm, dtype=float).reshape(-1, 3)
    gam = np.broadcast_to(np.asarray(gamma_n_mhz_t, dtype=float), (len(pos),))
    r = np.linalg.norm(pos, axis=1)
    if np.any(r <= 0.05):
        raise ValueError("nuclear position too close to the defect (|r| <= 0.05 nm)")
    n = pos / r[:, None]
    pref = dipolar_prefactor(constants.gamma_e, gam * 1e6, constants) / (r * 1e-9) ** 3
    azz = pref * (3 * n[:, 2] ** 2 - 1)
    axz = pref * 3 * n[:, 0] * n[:, 2]
    ayz = pref * 3 * n[:, 1] * n[:, 2]
    return np.stack([azz, axz, ayz], axis=1)


def hyperfine_vector(position_nm, gamma_n_mhz_t, constants=DEFAULT_CONSTANTS) -> HyperfineVector:
    pos = np.asarray(position_nm, dtype=float)
    if pos.shape != (3,):
        raise ValueError("position must be a 3-vector")
    if np.linalg.norm(pos) == 0:
        raise ValueError("zero-length position")
    azz, axz, ayz = hyperfine_components(pos, gamma_n_mhz_t, constants)[0]
    return HyperfineVector(float(azz), float(axz), float(ayz))


def _larmor_of(gamma_or_larmor, constants, larmor_hz):
    if larmor_hz is not None:
        return float(larmor_hz)
    return constants.larmor(gamma_or_larmor)


def conditional_hamiltonian(level: ElectronLevel, hv: HyperfineVector, species=C13,
                            constants=DEFAULT_CONSTANTS, larmor_hz=None) -> np.ndarray:
    """2x2 nuclear Hamiltonian (Hz) given the electron in ``level``."""
    wl = _larmor_of(species, constants, larmor_hz)
    m = level.ms
    return (wl + m * hv.a_par) * SZ + m * hv.a_perp * SX


def _split(wl, m, a_par, a_perp):
    return np.hypot(wl + m * a_par, m * a_perp)


def transition_frequencies(hv: HyperfineVector, species=C13, constants=DEFAULT_CONSTANTS,
                           larmor_hz=None) -> tuple[float, float]:
    """(omega1, omega2): nuclear splittings for electron |3/2> and |1/2>.

    omega_m = sqrt((w_L + m A_par)^2 + (m A_perp)^2).
    """
    wl = _larmor_of(species, constants, larmor_hz)
    return float(_split(wl, 1.5, hv.a_par, hv.a_perp)), float(_split(wl, 0.5, hv.a_par, hv.a_perp))


def transition_frequencies_array(larmor, a_par, a_perp):
    """Vectorised (omega1, omega2) for arrays of couplings."""
    return _split(larmor, 1.5, a_par, a_perp), _split(larmor, 0.5, a_par, a_perp)


def tilt_angle(level: ElectronLevel, hv: HyperfineVector, species=C13,
               constants=DEFAULT_CONSTANTS, larmor_hz=None) -> float:
    """Angle of the conditional quantisation axis from z, in the x-z plane."""
    wl = _larmor_of(species, constants, larmor_hz)
    m = level.ms
    z, x = wl + m * hv.a_par, m * hv.a_perp
    if z == 0 and x == 0:
        raise ValueError("degenerate conditional field; tilt angle undefined")
    return math.atan2(x, z)


def tilted_operators(beta):
    """(I_x_beta, I_y_beta, I_z_beta) for tilt ``beta`` about y (broadcasts)."""
    beta = np.asarray(beta, dtype=float)[..., None, None]
    c, s = np.cos(beta), np.sin(beta)
    iz = c * SZ + s * SX
    ix = c * SX - s * SZ
    iy = np.broadcast_to(SY, iz.shape)
    return ix, iy, iz


def rotating_frame_hamiltonian(level: ElectronLevel, hv: HyperfineVector, drive: dict,
                               species=C13, constants=DEFAULT_CONSTANTS,
                               larmor_hz=None) -> np.ndarray:
    """Time-independent RWA Hamiltonian in the frame rotating at the drive.

    ``drive`` holds ``omega`` (Hz), ``phase`` (rad) and ``rabi`` (Hz).
    Returns (w_m - w) I_z,beta + rabi cos(beta) (cos(phi) I_x,beta + sin(phi) I_y,beta)
    in the lab basis.
    """
    rabi = float(drive.get("rabi", 0.0))
    if rabi < 0:
        raise ValueError("rabi must be non-negative")
    wl = _larmor_of(species, constants, larmor_hz)
    if rabi > abs(wl) / 20:
        warnings.warn("rabi frequency exceeds |w_L|/20; rotating-wave approximation is poor",
                      RuntimeWarning, stacklevel=2)
    m = level.ms
    w_m = _split(wl, m, hv.a_par, hv.a_perp)
    beta = tilt_angle(level, hv, larmor_hz=wl)
    ix, iy, iz = tilted_operators(beta)
    phi = float(drive.get("phase", 0.0))
    return (w_m - float(drive["omega"])) * iz + rabi * math.cos(beta) * (
        math.cos(phi) * ix + math.sin(phi) * iy
    )
