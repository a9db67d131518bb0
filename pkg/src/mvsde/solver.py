"""Interacting-particle explicit scheme on dyadic grids.

Per step the ensemble's empirical law is computed once, before any state
moves; drift and diffusion are then frozen at the left grid point for every
particle.  Running several levels against one Brownian lattice (synchronous
coupling) makes the inter-level difference a pure discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .measure import EmpiricalMeasure, uniform_measure
from .models import CoefficientModel
from .paths import AUX_STREAM_BASE, BrownianLattice, coarsen, make_grid, sample_lattice, _particle_rng

__all__ = [
    "SolverError",
    "BlowUpError",
    "PointMass",
    "GaussianLaw",
    "UniformBox",
    "InitialLaw",
    "ParticleEnsemble",
    "TrajectorySet",
    "sample_initial",
    "to_measure",
    "em_run",
    "em_multilevel",
    "run_single",
]

#: abort threshold for any state coordinate
BLOWUP_LIMIT = 1e8


class SolverError(ValueError):
    pass


class BlowUpError(RuntimeError):
    """State left the admissible range; carries step/particle diagnostics."""

    def __init__(self, step: int, time: float, particle: int, state: np.ndarray):
        self.step = step
        self.time = time
        self.particle = particle
        self.state = np.array(state)
        super().__init__(
            f"blow-up at step {step} (t={time:.6g}): particle {particle} "
            f"reached state {self.state}"
        )


# ---------------------------------------------------------------------------
# initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointMass:
    x0: object = 0.0

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=np.float64), (dim,))
        return np.tile(x0, (n, 1))

    def mean(self, dim: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.x0, dtype=np.float64), (dim,)).copy()

    def second_moment(self, dim: int) -> float:
        m = self.mean(dim)
        return float(np.dot(m, m))


@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian with mean vector and scalar / diagonal / full covariance."""

    mean_vec: object = 0.0
    cov: object = 1.0

    def _factor(self, dim: int) -> np.ndarray:
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 0:
            if cov < 0:
                raise SolverError(f"negative covariance {cov}")
            return math.sqrt(float(cov)) * np.eye(dim)
        if cov.ndim == 1:
            if cov.shape != (dim,) or (cov < 0).any():
                raise SolverError("diagonal covariance must be nonnegative with length d")
            return np.diag(np.sqrt(cov))
        if cov.shape != (dim, dim):
            raise SolverError(f"covariance shape {cov.shape}, expected ({dim}, {dim})")
        sym = 0.5 * (cov + cov.T)
        eigvals, eigvecs = np.linalg.eigh(sym)
        tol = 1e-12 * max(1.0, float(np.abs(eigvals).max()))
        if eigvals.min() < -tol:
            raise SolverError(f"covariance is not positive semidefinite (min eigenvalue {eigvals.min():.3g})")
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        factor = self._factor(dim)
        mean = np.broadcast_to(np.asarray(self.mean_vec, dtype=np.float64), (dim,))
        return mean + rng.standard_normal((n, dim)) @ factor.T

    def mean(self, dim: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mean_vec, dtype=np.float64), (dim,)).copy()

    def second_moment(self, dim: int) -> float:
        m = self.mean(dim)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 0:
            trace = dim * float(cov)
        elif cov.ndim == 1:
            trace = float(cov.sum())
        else:
            trace = float(np.trace(cov))
        return float(np.dot(m, m)) + trace


@dataclass(frozen=True)
class UniformBox:
    lo: object = -1.0
    hi: object = 1.0

    def _bounds(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lo, dtype=np.float64), (dim,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=np.float64), (dim,))
        if (hi <= lo).any():
            raise SolverError("uniform box needs lo < hi componentwise")
        return lo, hi

    def sample(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        lo, hi = self._bounds(dim)
        return rng.uniform(lo, hi, size=(n, dim))

    def mean(self, dim: int) -> np.ndarray:
        lo, hi = self._bounds(dim)
        return 0.5 * (lo + hi)

    def second_moment(self, dim: int) -> float:
        lo, hi = self._bounds(dim)
        mean = 0.5 * (lo + hi)
        var = (hi - lo) ** 2 / 12.0
        return float(np.sum(var + mean**2))


InitialLaw = Union[PointMass, GaussianLaw, UniformBox]


# ---------------------------------------------------------------------------
# ensembles and trajectories
# ---------------------------------------------------------------------------

@dataclass
class ParticleEnsemble:
    states: np.ndarray
    time_index: int = 0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2:
            raise SolverError(f"states must be (N, d), got shape {states.shape}")
        if not np.isfinite(states).all():
            raise SolverError("non-finite state in ensemble")
        self.states = states

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class TrajectorySet:
    """States recorded on a dyadic sub-grid: ``states[j]`` is the ensemble at
    ``times[j]``; metadata carries (model id, seed, N, horizon, levels)."""

    level: int
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 3 or times.ndim != 1 or states.shape[0] != times.shape[0]:
            raise SolverError(
                f"trajectory shapes inconsistent: times {times.shape}, states {states.shape}"
            )
        if not np.isfinite(states).all():
            raise SolverError("non-finite value in recorded trajectory")
        times.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]


def sample_initial(law: InitialLaw, n: int, dim: int, seed: int) -> ParticleEnsemble:
    """N i.i.d. draws from the initial law, deterministic in the seed.

    Uses a counter-based stream in the auxiliary key range so it never
    collides with the per-particle noise streams of the same seed.
    """
    if n < 1 or dim < 1:
        raise SolverError("need at least one particle and one dimension")
    rng = _particle_rng(seed, AUX_STREAM_BASE)
    return ParticleEnsemble(states=law.sample(rng, n, dim))


def to_measure(ensemble: ParticleEnsemble) -> EmpiricalMeasure:
    """Uniform empirical law on the current states (the measure snapshots
    its own copy, so later ensemble updates cannot reach it)."""
    return uniform_measure(ensemble.states)


def _guard(states: np.ndarray, step: int, time: float) -> None:
    worst = np.abs(states).max()
    if not (worst <= BLOWUP_LIMIT):
        per_particle = np.abs(states).max(axis=1)
        bad = ~np.isfinite(per_particle)
        particle = int(np.nonzero(bad)[0][0]) if bad.any() else int(per_particle.argmax())
        raise BlowUpError(step=step, time=time, particle=particle, state=states[particle])


def _apply_noise(model, states, mu, incr):
    if model.diffusion_apply is not None:
        return np.asarray(model.diffusion_apply(states, mu, incr), dtype=np.float64)
    sig = np.asarray(model.diffusion(states, mu), dtype=np.float64)
    return np.einsum("nij,nj->ni", sig, incr)


def em_run(
    model: CoefficientModel,
    ensemble: ParticleEnsemble,
    level: int,
    lattice: BrownianLattice,
    record_level: int | None = None,
    in_cell: bool = False,
) -> TrajectorySet:
    """Advance the ensemble over the level-``level`` grid.

    Per cell: freeze the empirical law and the left states, then
    ``X += b(X, mu) * h + sigma(X, mu) @ dW`` for every particle, with the
    cell increment taken from the coarsened lattice.  Recorded states are
    exactly the iterates of this recursion.

    With ``in_cell=True`` the record grid may be finer than the step grid:
    between grid points the scheme is, by construction, the frozen-coefficient
    segment ``X + b(X, mu) (r - t_i) + sigma(X, mu) (W_r - W_{t_i})``, and
    interior record points are filled from that identity using the lattice's
    finer increments (cell endpoints still come from the recursion).
    """
    if lattice.level < level:
        raise SolverError(f"lattice level {lattice.level} is coarser than requested level {level}")
    if model.dim != lattice.dim or model.dim != ensemble.dim:
        raise SolverError(
            f"dimension mismatch: model {model.dim}, lattice {lattice.dim}, ensemble {ensemble.dim}"
        )
    if ensemble.n_particles != lattice.n_particles:
        raise SolverError(
            f"particle mismatch: ensemble {ensemble.n_particles}, lattice {lattice.n_particles}"
        )
    if record_level is None:
        record_level = level
    max_record = lattice.level if in_cell else level
    if not (0 <= record_level <= max_record):
        raise SolverError(
            f"record level {record_level} outside [0, {max_record}]"
            + ("" if in_cell else " (pass in_cell=True to record below the step scale)")
        )

    grid = make_grid(lattice.horizon, level)
    record_grid = make_grid(lattice.horizon, record_level)
    dw = coarsen(lattice, level)
    h = grid.step
    n, dim = ensemble.n_particles, ensemble.dim
    weights = np.full(n, 1.0 / n)
    dense = record_level > level
    stride = 1 if dense else 1 << (level - record_level)
    per_cell = (1 << (record_level - level)) if dense else 1
    dw_fine = coarsen(lattice, record_level) if dense else None
    fine_step = record_grid.step

    states = ensemble.states.copy()
    out = np.empty((record_grid.num_cells + 1, n, dim))
    out[0] = states
    nxt = 1
    for i in range(grid.num_cells):
        mu = EmpiricalMeasure(states, weights)
        drift = np.asarray(model.drift(states, mu), dtype=np.float64)
        if dense and per_cell > 1:
            partial = np.cumsum(dw_fine[:, i * per_cell : (i + 1) * per_cell, :], axis=1)
            for k in range(1, per_cell):
                out[nxt + k - 1] = (
                    states + (k * fine_step) * drift + _apply_noise(model, states, mu, partial[:, k - 1, :])
                )
            nxt += per_cell - 1
        noise = _apply_noise(model, states, mu, dw[:, i, :])
        states = states + h * drift + noise
        _guard(states, step=i, time=grid.point(i + 1))
        if (i + 1) % stride == 0:
            out[nxt] = states
            nxt += 1

    meta = {
        "model_id": model.model_id,
        "seed": lattice.seed,
        "n_particles": n,
        "horizon": lattice.horizon,
        "level": level,
        "record_level": record_level,
        "in_cell": dense,
    }
    return TrajectorySet(level=level, times=record_grid.points(), states=out, meta=meta)


def em_multilevel(
    model: CoefficientModel,
    law: InitialLaw,
    seed: int,
    levels: list[int],
    finest: int,
    n_particles: int,
    horizon: float,
    record_level: int | None = None,
    in_cell: bool = False,
    workers: int = 1,
    memory_cap: int | None = None,
) -> dict[int, TrajectorySet]:
    """Run every requested level plus the finest reference off one lattice.

    All levels share the initial ensemble and the Brownian lattice, and are
    recorded on a common grid (default: the coarsest requested level), so the
    returned trajectories are synchronously coupled.  The reference level
    ``finest`` is included in the result map.
    """
    levels = sorted(set(int(v) for v in levels))
    if not levels:
        raise SolverError("need at least one level")
    if levels[0] < 0:
        raise SolverError("levels must be nonnegative")
    if levels[-1] >= finest:
        raise SolverError(f"max level {levels[-1]} must be below the reference level {finest}")
    if record_level is None:
        record_level = levels[0]
    kwargs = {} if memory_cap is None else {"memory_cap": memory_cap}
    lattice = sample_lattice(seed, n_particles, model.dim, finest, horizon, workers=workers, **kwargs)
    ens = sample_initial(law, n_particles, model.dim, seed)
    result: dict[int, TrajectorySet] = {}
    for lvl in [*levels, finest]:
        result[lvl] = em_run(model, ens, lvl, lattice, record_level=record_level, in_cell=in_cell)
    return result


def run_single(
    model: CoefficientModel,
    law: InitialLaw,
    seed: int,
    level: int,
    finest: int | None = None,
    n_particles: int = 1000,
    horizon: float = 1.0,
    record_level: int | None = None,
    workers: int = 1,
    memory_cap: int | None = None,
) -> TrajectorySet:
    """One level against a fresh lattice (finest defaults to the run level)."""
    finest = level if finest is None else finest
    if finest < level:
        raise SolverError(f"finest level {finest} below run level {level}")
    kwargs = {} if memory_cap is None else {"memory_cap": memory_cap}
    lattice = sample_lattice(seed, n_particles, model.dim, finest, horizon, workers=workers, **kwargs)
    ens = sample_initial(law, n_particles, model.dim, seed)
    return em_run(model, ens, level, lattice, record_level=record_level)
