"""4H-SiC supercell generation and stochastic isotope placement.

Lengths are in nm throughout. The defect (silicon vacancy) sits on the Si
site at the origin of cell (0, 0, 0); the simulation region is an
axis-aligned cube centred on it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

C13 = "C13"
SI29 = "Si29"

#: Signed nuclear gyromagnetic ratios in MHz/T.
GAMMA_MHZ_PER_T = {C13: 10.71, SI29: -8.46}

NATURAL_C13 = 0.011
NATURAL_SI29 = 0.047

# 4H (ABCB) basis in fractional coordinates of the cell spanned by
# a1 = a e_x, a2 = a(-cos(gamma) e_x + sin(gamma) e_y), a3 = c e_z.
# With gamma = 120 deg, a1 and a2 enclose 60 deg, so the B/C stacking
# columns sit at (1/3, 1/3) and (2/3, 2/3). Internal parameter u = 3/16.
DEFAULT_BASIS = (
    ((0.0, 0.0, 0.0), "Si"),
    ((0.0, 0.0, 0.5), "Si"),
    ((1 / 3, 1 / 3, 0.25), "Si"),
    ((2 / 3, 2 / 3, 0.75), "Si"),
    ((0.0, 0.0, 3 / 16), "C"),
    ((0.0, 0.0, 11 / 16), "C"),
    ((1 / 3, 1 / 3, 7 / 16), "C"),
    ((2 / 3, 2 / 3, 15 / 16), "C"),
)

_SPECIES_OF_ELEMENT = {"C": C13, "Si": SI29}


@dataclass(frozen=True)
class LatticeSpec:
    """Hexagonal 4H-SiC cell. Lengths in nm, angles in degrees."""

    a: float = 0.3073
    b: float = 0.3073
    c: float = 1.0053
    alpha: float = 90.0
    beta: float = 90.0
    gamma: float = 120.0
    basis: tuple = DEFAULT_BASIS

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("lattice constants must be positive")
        if not math.isclose(self.a, self.b):
            raise ValueError("hexagonal cell requires a == b")
        elements = [el for _, el in self.basis]
        if elements.count("Si") != 4 or elements.count("C") != 4 or len(elements) != 8:
            raise ValueError("basis must hold exactly 4 Si and 4 C sites")
        for frac, _ in self.basis:
            if any(not 0.0 <= f < 1.0 for f in frac):
                raise ValueError(f"fractional coordinate out of [0, 1): {frac}")

    @property
    def vectors(self) -> np.ndarray:
        """Rows are a1, a2, a3 in Cartesian nm."""
        g = math.radians(self.gamma)
        return np.array(
            [
                [self.a, 0.0, 0.0],
                [-self.a * math.cos(g), self.a * math.sin(g), 0.0],
                [0.0, 0.0, self.c],
            ]
        )

    @property
    def cell_volume(self) -> float:
        return self.a * self.b * self.c * math.sin(math.radians(self.gamma))

    def basis_cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        frac = np.array([f for f, _ in self.basis], dtype=float)
        elements = np.array([el for _, el in self.basis])
        return frac @ self.vectors, elements


@dataclass(frozen=True)
class IsotopeConfig:
    c13_fraction: float = NATURAL_C13
    si29_fraction: float = NATURAL_SI29
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("c13_fraction", "si29_fraction"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")

    @property
    def total(self) -> float:
        return self.c13_fraction + self.si29_fraction


def concentration_pair(total: float) -> tuple[float, float]:
    """Split a total isotope fraction into (c13, si29).

    Both species grow together until 13C reaches natural abundance; beyond
    that only 29Si grows.
    """
    if total < 0:
        raise ValueError("total concentration must be non-negative")
    if total / 2 <= NATURAL_C13:
        return total / 2, total / 2
    return NATURAL_C13, total - NATURAL_C13


@dataclass(frozen=True)
class NuclearSpin:
    position: tuple
    species: str
    gamma_n: float  # MHz/T

    def __post_init__(self):
        if self.species not in GAMMA_MHZ_PER_T:
            raise ValueError(f"unknown species {self.species!r}")
        if not np.any(np.asarray(self.position, dtype=float)):
            raise ValueError("a nuclear spin cannot sit on the defect")


@dataclass(frozen=True)
class Sites:
    """Lattice sites of a supercell: (M, 3) positions and element labels."""

    positions: np.ndarray
    elements: np.ndarray
    volume: float
    spec: LatticeSpec = field(default_factory=LatticeSpec)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[tuple[np.ndarray, str]]:
        return zip(self.positions, self.elements)

    @property
    def n_cells(self) -> float:
        return len(self) / len(self.spec.basis)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "z", "element"])
            for (x, y, z), el in self:
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(z)), el])


@dataclass(frozen=True)
class SpinBath:
    """Sampled nuclear spins around the defect.

    Stored column-wise for vectorised physics; ``spins`` gives the
    per-spin view.
    """

    positions: np.ndarray
    species: np.ndarray
    volume: float
    seed: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        spc = np.asarray(self.species, dtype="<U4").reshape(-1)
        if len(pos) != len(spc):
            raise ValueError("positions and species differ in length")
        pos.setflags(write=False)
        spc.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "species", spc)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def gamma(self) -> np.ndarray:
        """Signed gyromagnetic ratios in MHz/T."""
        return np.array([GAMMA_MHZ_PER_T[s] for s in self.species], dtype=float)

    @property
    def spins(self) -> list[NuclearSpin]:
        return [
            NuclearSpin(tuple(float(v) for v in p), str(s), GAMMA_MHZ_PER_T[s])
            for p, s in zip(self.positions, self.species)
        ]

    def subset(self, mask) -> "SpinBath":
        mask = np.asarray(mask)
        return SpinBath(self.positions[mask], self.species[mask], self.volume, self.seed)

    def within(self, radius: float) -> "SpinBath":
        return self.subset(np.linalg.norm(self.positions, axis=1) <= radius)

    @classmethod
    def from_spins(cls, spins, volume: float = 0.0, seed=None) -> "SpinBath":
        spins = list(spins)
        pos = np.array([s.position for s in spins], dtype=float).reshape(-1, 3)
        return cls(pos, np.array([s.species for s in spins], dtype="<U4"), volume, seed)

    def to_json(self) -> str:
        rows = [
            {"species": str(s), "x_nm": float(p[0]), "y_nm": float(p[1]), "z_nm": float(p[2])}
            for p, s in zip(self.positions, self.species)
        ]
        return json.dumps(rows)

    @classmethod
    def from_json(cls, text: str, volume: float = 0.0) -> "SpinBath":
        rows = json.loads(text)
        pos = np.array([[r["x_nm"], r["y_nm"], r["z_nm"]] for r in rows], dtype=float)
        species = np.array([r["species"] for r in rows], dtype="<U4")
        for s in species:
            if s not in GAMMA_MHZ_PER_T:
                raise ValueError(f"unknown species {s!r}")
        return cls(pos.reshape(-1, 3), species, volume)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path, volume: float = 0.0) -> "SpinBath":
        return cls.from_json(Path(path).read_text(), volume)


def unit_cell_sites(spec: LatticeSpec = LatticeSpec()) -> Sites:
    pos, el = spec.basis_cartesian()
    return Sites(pos, el, spec.cell_volume, spec)


def generate_supercell(spec: LatticeSpec = LatticeSpec(), volume: float = 680.0) -> Sites:
    """Every lattice site inside an origin-centred cube of ``volume`` nm^3."""
    if volume <= 0:
        raise ValueError("volume must be positive")
    if volume <= spec.cell_volume:
        raise ValueError("volume must exceed one unit-cell volume")
    half = volume ** (1.0 / 3.0) / 2.0
    vecs = spec.vectors
    basis_pos, basis_el = spec.basis_cartesian()

    # a1 and a2 both have non-negative x; bound n2 by y, then n1 by x.
    n3 = np.arange(math.floor(-half / spec.c) - 1, math.ceil(half / spec.c) + 1)
    m2 = math.ceil(half / vecs[1, 1]) + 1
    n2 = np.arange(-m2, m2 + 1)
    m1 = math.ceil((half + m2 * abs(vecs[1, 0])) / spec.a) + 1
    n1 = np.arange(-m1, m1 + 1)
    grid = np.stack(np.meshgrid(n1, n2, n3, indexing="ij"), axis=-1).reshape(-1, 3)
    origins = grid @ vecs

    pos = (origins[:, None, :] + basis_pos[None, :, :]).reshape(-1, 3)
    el = np.tile(basis_el, len(origins))
    tol = 1e-9
    keep = np.all(np.abs(pos) <= half + tol, axis=1)
    pos, el = pos[keep], el[keep]
    # clean -0.0 and rounding noise so the defect site is exactly the origin
    pos[np.abs(pos) < 1e-12] = 0.0
    order = np.lexsort((pos[:, 0], pos[:, 1], pos[:, 2]))
    return Sites(pos[order], el[order], float(volume), spec)


def sample_bath(sites: Sites, config: IsotopeConfig = IsotopeConfig()) -> SpinBath:
    """Bernoulli placement of 13C on C sites and 29Si on Si sites.

    The vacancy (origin) site is never occupied.
    """
    if len(sites) == 0:
        raise ValueError("no lattice sites to sample")
    rng = np.random.default_rng(int(config.rng_seed))
    draws = rng.random(len(sites))
    prob = np.where(sites.elements == "C", config.c13_fraction, config.si29_fraction)
    occupied = draws < prob
    occupied &= np.any(sites.positions != 0.0, axis=1)
    species = np.array([_SPECIES_OF_ELEMENT[e] for e in sites.elements[occupied]], dtype="<U4")
    return SpinBath(sites.positions[occupied], species, sites.volume, int(config.rng_seed))


def bath_statistics(bath: SpinBath) -> dict:
    """Species counts plus nearest-neighbour and distance-to-defect samples (nm)."""
    counts = {C13: int(np.sum(bath.species == C13)), SI29: int(np.sum(bath.species == SI29))}
    if len(bath) == 0:
        return {"counts": counts, "nn_distance": np.empty(0), "distance_to_origin": np.empty(0)}
    r0 = np.linalg.norm(bath.positions, axis=1)
    if len(bath) > 1:
        dist, _ = cKDTree(bath.positions).query(bath.positions, k=2)
        nn = dist[:, 1]
    else:
        nn = np.empty(0)
    return {"counts": counts, "nn_distance": nn, "distance_to_origin": r0}
