"""Dyadic time grids and refinement-consistent Brownian increments.

One finest-level increment array drives every discretization level of a
coupled experiment.  Coarser increments are produced by adjacent-pair tree
reduction, so a level-n increment is literally a node of one fixed addition
tree over the finest increments: coarsening commutes with itself bit-exactly
(L -> n -> m performs the identical float additions as L -> m).

Increments are a pure function of (seed, particle, step, dim) through a
counter-based generator keyed per particle, so any particle row can be
regenerated in isolation and results do not depend on the parallel schedule.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridError",
    "LatticeError",
    "DyadicGrid",
    "make_grid",
    "BrownianLattice",
    "sample_lattice",
    "particle_increments",
    "coarsen",
    "dump_lattice",
    "load_lattice",
]

_MAGIC = b"MVBL1"
_MASK64 = (1 << 64) - 1

#: second key word reserved for non-noise streams (initial-ensemble sampling)
AUX_STREAM_BASE = 1 << 63

MAX_GRID_LEVEL = 62
MAX_LATTICE_LEVEL = 30
DEFAULT_MEMORY_CAP = 2**31  # bytes


class GridError(ValueError):
    pass


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class DyadicGrid:
    """Uniform grid t_i = i * T / 2^level on [0, T]."""

    horizon: float
    level: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise GridError(f"horizon must be positive and finite, got {self.horizon}")
        if not (0 <= self.level <= MAX_GRID_LEVEL):
            raise GridError(f"level must lie in [0, {MAX_GRID_LEVEL}], got {self.level}")

    @property
    def num_cells(self) -> int:
        return 1 << self.level

    @property
    def step(self) -> float:
        # division by a power of two is exact in binary floating point
        return self.horizon / self.num_cells

    def point(self, i: int) -> float:
        if not (0 <= i <= self.num_cells):
            raise GridError(f"index {i} outside [0, {self.num_cells}]")
        return i * self.step

    def points(self) -> np.ndarray:
        if self.level > MAX_LATTICE_LEVEL:
            raise GridError(f"refusing to materialize 2^{self.level} + 1 points")
        pts = np.arange(self.num_cells + 1, dtype=np.float64) * self.step
        pts.flags.writeable = False
        return pts

    def cell_index(self, t: float) -> int:
        """Index of the cell whose left endpoint floors t; T maps to the last cell."""
        if not (0.0 <= t <= self.horizon):
            raise GridError(f"time {t} outside [0, {self.horizon}]")
        i = int(np.floor(t / self.step))
        return min(i, self.num_cells - 1)

    def floor_point(self, t: float) -> float:
        """Largest grid point no greater than t."""
        if not (0.0 <= t <= self.horizon):
            raise GridError(f"time {t} outside [0, {self.horizon}]")
        return min(int(np.floor(t / self.step)), self.num_cells) * self.step


def make_grid(horizon: float, level: int) -> DyadicGrid:
    return DyadicGrid(horizon=float(horizon), level=int(level))


@dataclass(frozen=True)
class BrownianLattice:
    """Finest-level increments for all particles: shape (N, 2^level, dim),
    each entry Normal(0, horizon / 2^level)."""

    seed: int
    n_particles: int
    dim: int
    level: int
    horizon: float
    increments: np.ndarray

    def __post_init__(self) -> None:
        if self.n_particles < 1 or self.dim < 1:
            raise LatticeError("need at least one particle and one dimension")
        if not (0 <= self.level <= MAX_LATTICE_LEVEL):
            raise LatticeError(f"lattice level must lie in [0, {MAX_LATTICE_LEVEL}], got {self.level}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise LatticeError(f"horizon must be positive and finite, got {self.horizon}")
        expected = (self.n_particles, 1 << self.level, self.dim)
        arr = np.asarray(self.increments, dtype=np.float64)
        if arr.shape != expected:
            raise LatticeError(f"increments shape {arr.shape}, expected {expected}")
        arr.flags.writeable = False
        object.__setattr__(self, "increments", arr)


def _particle_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def particle_increments(seed: int, particle: int, dim: int, level: int, horizon: float) -> np.ndarray:
    """Regenerate one particle's increment rows without building the lattice."""
    steps = 1 << level
    scale = np.sqrt(horizon / steps)
    return _particle_rng(seed, particle).standard_normal((steps, dim)) * scale


def sample_lattice(
    seed: int,
    n_particles: int,
    dim: int,
    level: int,
    horizon: float,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    workers: int = 1,
) -> BrownianLattice:
    """Draw the finest-level increment array.

    Deterministic in (seed, particle, step, dim) and independent of
    ``workers``: every particle row comes from its own keyed counter-based
    stream and is written to a disjoint slice.
    """
    if n_particles < 1 or dim < 1:
        raise LatticeError("need at least one particle and one dimension")
    if not (0 <= level <= MAX_LATTICE_LEVEL):
        raise LatticeError(
            f"lattice level must lie in [0, {MAX_LATTICE_LEVEL}] "
            f"(memory guard); regenerate rows on demand with particle_increments() instead"
        )
    steps = 1 << level
    nbytes = n_particles * steps * dim * 8
    if nbytes > memory_cap:
        raise LatticeError(
            f"lattice would need {nbytes} bytes (cap {memory_cap}); "
            f"stream per-particle rows with particle_increments() instead"
        )
    scale = np.sqrt(horizon / steps)
    out = np.empty((n_particles, steps, dim))

    def fill(lo: int, hi: int) -> None:
        for p in range(lo, hi):
            out[p] = _particle_rng(seed, p).standard_normal((steps, dim))

    if workers > 1 and n_particles > 1:
        n_chunks = min(workers * 4, n_particles)
        bounds = np.linspace(0, n_particles, n_chunks + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fill, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
            for fut in futures:
                fut.result()
    else:
        fill(0, n_particles)
    out *= scale
    return BrownianLattice(
        seed=seed, n_particles=n_particles, dim=dim, level=level, horizon=horizon, increments=out
    )


def _halve_cells(arr: np.ndarray) -> np.ndarray:
    # adjacent-pair reduction along the step axis, left child first
    return arr[:, 0::2, :] + arr[:, 1::2, :]


def coarsen(lattice: BrownianLattice, level: int) -> np.ndarray:
    """Increments at a coarser level: cell j is the tree sum of its children.

    Returns a fresh (N, 2^level, dim) array.  Because each halving adds
    adjacent pairs, any two routes to the same coarse level perform the
    identical additions, so cross-level sums agree bit for bit.
    """
    if not (0 <= level <= lattice.level):
        raise LatticeError(f"target level {level} outside [0, {lattice.level}]")
    arr = lattice.increments
    for _ in range(lattice.level - level):
        arr = _halve_cells(arr)
    if arr is lattice.increments:
        arr = lattice.increments.copy()
    return arr


def dump_lattice(lattice: BrownianLattice, path) -> None:
    """Little-endian binary dump: magic, seed/N/d/level as u64, horizon as f64,
    then row-major (particle, step, dim) increments as f64."""
    header = _MAGIC + struct.pack(
        "<QQQQd",
        lattice.seed & _MASK64,
        lattice.n_particles,
        lattice.dim,
        lattice.level,
        lattice.horizon,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(lattice.increments, dtype="<f8").tobytes())


def load_lattice(path) -> BrownianLattice:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise LatticeError(f"bad magic in {path!r}: not a lattice dump")
    offset = len(_MAGIC)
    seed, n_particles, dim, level, horizon = struct.unpack_from("<QQQQd", blob, offset)
    offset += struct.calcsize("<QQQQd")
    count = n_particles * (1 << level) * dim
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    if data.size != count:
        raise LatticeError("truncated lattice dump")
    increments = data.astype(np.float64).reshape(n_particles, 1 << level, dim)
    return BrownianLattice(
        seed=int(seed),
        n_particles=int(n_particles),
        dim=int(dim),
        level=int(level),
        horizon=float(horizon),
        increments=increments,
    )
