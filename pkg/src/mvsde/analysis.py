"""Trajectory diagnostics: strong-error curves and rates, moment and
increment-scaling envelopes, Osgood-integral and comparison-ODE oracles, and
coupled-law metric curves.

Estimates come with Monte-Carlo standard errors from per-particle statistics;
rate verdicts are decay exponents fitted on log2 error curves, since the
constants in the underlying bounds are existential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp

from .measure import (
    EmpiricalMeasure,
    TestFunctionDictionary,
    default_dictionary,
    rho_lower,
    rho_upper,
    uniform_measure,
)
from .models import CoefficientModel, ModulusKappaEta
from .solver import InitialLaw, TrajectorySet, em_run, sample_initial, sample_lattice

__all__ = [
    "AnalysisError",
    "RateReport",
    "strong_error",
    "fit_rate",
    "MomentReport",
    "moment_curve",
    "IncrementReport",
    "increment_scaling",
    "osgood_integral",
    "BihariReport",
    "bihari_ode_check",
    "LawGapReport",
    "law_gap_curve",
    "UniquenessReport",
    "uniqueness_replay",
]


class AnalysisError(ValueError):
    pass


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


def _mean_se(per_particle: np.ndarray) -> tuple[float, float]:
    """Exactly rounded mean and its standard error (permutation invariant)."""
    n = per_particle.shape[0]
    mean = _fsum(per_particle) / n
    if n < 2:
        return mean, 0.0
    var = _fsum((per_particle - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# strong error and rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    levels: tuple[int, ...]
    errors: tuple[float, ...]
    stderrs: tuple[float, ...] | None
    slope: float
    intercept: float
    n_particles: int | None = None
    seed: int | None = None
    model_id: str | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise AnalysisError("rate fit produced non-finite coefficients")


def strong_error(ref: TrajectorySet, coarse: TrajectorySet) -> tuple[float, float]:
    """Mean over particles of the squared sup gap along the record grid.

    Requires synchronously coupled inputs on a common record grid; the
    standard error is the per-particle sample deviation over sqrt(N).
    """
    if ref.n_particles != coarse.n_particles or ref.dim != coarse.dim:
        raise AnalysisError("trajectory sets have mismatched particle count or dimension")
    if not np.array_equal(ref.times, coarse.times):
        raise AnalysisError("trajectory sets are recorded on different grids")
    gaps = coarse.states - ref.states
    sup_sq = np.max(np.sum(gaps * gaps, axis=2), axis=0)
    return _mean_se(sup_sq)


def fit_rate(
    levels,
    errors,
    stderrs=None,
    n_particles: int | None = None,
    seed: int | None = None,
    model_id: str | None = None,
) -> RateReport:
    """Ordinary least squares of log2(error) on the level index."""
    levels = [int(v) for v in levels]
    errors = [float(e) for e in errors]
    if len(levels) != len(errors):
        raise AnalysisError("levels and errors must have equal length")
    if len(levels) < 3:
        raise AnalysisError(f"need at least 3 levels to fit a rate, got {len(levels)}")
    if len(set(levels)) != len(levels):
        raise AnalysisError("levels must be distinct")
    if any(not (e > 0 and math.isfinite(e)) for e in errors):
        raise AnalysisError("errors must be positive and finite to take logs")
    slope, intercept = np.polyfit(np.asarray(levels, dtype=np.float64), np.log2(errors), 1)
    return RateReport(
        levels=tuple(levels),
        errors=tuple(errors),
        stderrs=None if stderrs is None else tuple(float(s) for s in stderrs),
        slope=float(slope),
        intercept=float(intercept),
        n_particles=n_particles,
        seed=seed,
        model_id=model_id,
    )


# ---------------------------------------------------------------------------
# moment curves and increment scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    times: np.ndarray
    moments: np.ndarray
    stderrs: np.ndarray
    order: int
    envelope_constant: float
    envelope: np.ndarray

    @property
    def dominated(self) -> bool:
        return bool(np.all(self.envelope >= self.moments))


def moment_curve(traj: TrajectorySet, order: int = 1) -> MomentReport:
    """Per record point: ensemble average of |X|^(2p) with standard error,
    plus the smallest C >= 0 such that C*(1 + m_0)*exp(C*t) dominates the
    whole empirical curve (m_0 = empirical moment at t = 0)."""
    if order < 1:
        raise AnalysisError(f"moment order must be at least 1, got {order}")
    with np.errstate(over="ignore"):
        sq = np.sum(traj.states**2, axis=2)
        vals = sq**order
    if not np.isfinite(vals).all():
        raise AnalysisError(f"overflow computing |X|^{2 * order}; use a smaller moment order")
    pairs = [_mean_se(vals[j]) for j in range(vals.shape[0])]
    moments = np.array([p[0] for p in pairs])
    stderrs = np.array([p[1] for p in pairs])
    m0 = float(moments[0])
    times = traj.times

    def dominates(c: float) -> bool:
        with np.errstate(over="ignore"):
            env = c * (1.0 + m0) * np.exp(c * times)
        return bool(np.all(env >= moments))

    if np.all(moments == 0.0):
        fitted = 0.0
    else:
        hi = 1.0
        for _ in range(200):
            if dominates(hi):
                break
            hi *= 2.0
        else:
            raise AnalysisError("moment envelope fit failed to bracket a constant")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if dominates(mid):
                hi = mid
            else:
                lo = mid
        fitted = hi
    with np.errstate(over="ignore"):
        envelope = fitted * (1.0 + m0) * np.exp(fitted * times)
    return MomentReport(
        times=times,
        moments=moments,
        stderrs=stderrs,
        order=order,
        envelope_constant=fitted,
        envelope=envelope,
    )


@dataclass(frozen=True)
class IncrementReport:
    exponent: float | None
    lags: tuple[int, ...]
    lag_times: np.ndarray
    values: np.ndarray
    order: int
    degenerate: bool = False


def increment_scaling(traj: TrajectorySet, order: int, lags) -> IncrementReport:
    """Regress log E|X_t - X_s|^(2p) on log(t - s) over a ladder of lags.

    Lags are record-grid index offsets and must span at least two decades;
    each lag's expectation pools all equal-lag windows and all particles.
    An all-zero increment field is reported as degenerate instead of fitted.
    """
    lags = sorted(set(int(v) for v in lags))
    if len(lags) < 3:
        raise AnalysisError("need at least 3 distinct lags")
    if lags[0] < 1 or lags[-1] >= traj.times.shape[0]:
        raise AnalysisError(f"lags must lie in [1, {traj.times.shape[0] - 1}]")
    steps = np.diff(traj.times)
    if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
        raise AnalysisError("record grid must be uniform for increment scaling")
    if lags[-1] < 100 * lags[0]:
        raise AnalysisError("lag ladder must span at least two decades")
    dt = float(traj.times[1] - traj.times[0])
    values = np.empty(len(lags))
    for k, lag in enumerate(lags):
        gaps = traj.states[lag:] - traj.states[:-lag]
        sq = np.sum(gaps * gaps, axis=2) ** order
        values[k] = float(np.mean(sq))
    lag_times = np.asarray(lags, dtype=np.float64) * dt
    if np.all(values == 0.0):
        return IncrementReport(
            exponent=None, lags=tuple(lags), lag_times=lag_times, values=values,
            order=order, degenerate=True,
        )
    if (values <= 0.0).any():
        raise AnalysisError("some lags have zero mean increment; cannot take logs")
    slope, _ = np.polyfit(np.log(lag_times), np.log(values), 1)
    return IncrementReport(
        exponent=float(slope), lags=tuple(lags), lag_times=lag_times, values=values,
        order=order, degenerate=False,
    )


# ---------------------------------------------------------------------------
# Osgood integral and comparison ODE
# ---------------------------------------------------------------------------

def osgood_integral(kappa, eps: float, upper: float = 1.0) -> float:
    """Adaptive quadrature of the reciprocal modulus over [eps, upper].

    Divergence as eps -> 0 is the integral test for uniqueness under a
    concave modulus.  Integration runs in u = log(1/x) coordinates, which
    flattens the near-zero singularity (for kappa(x) = x the transformed
    integrand is constant).
    """
    if not (0.0 < eps < upper):
        raise AnalysisError(f"need 0 < eps < upper, got eps={eps}, upper={upper}")
    probe = np.geomspace(eps, upper, 64)
    pvals = np.asarray(kappa(probe), dtype=np.float64)
    if not (np.isfinite(pvals).all() and (pvals > 0).all()):
        raise AnalysisError("modulus must be positive and finite on (eps, upper]")

    def integrand(u: float) -> float:
        x = math.exp(-u)
        return x / float(kappa(x))

    u_lo = math.log(1.0 / upper)
    u_hi = math.log(1.0 / eps)
    points = None
    if isinstance(kappa, ModulusKappaEta) and eps < kappa.eta < upper:
        points = [math.log(1.0 / kappa.eta)]
    value, _ = quad(integrand, u_lo, u_hi, epsabs=0.0, epsrel=1e-11, limit=500, points=points)
    return float(value)


@dataclass(frozen=True)
class BihariReport:
    times: np.ndarray
    path: np.ndarray
    closed_form: np.ndarray | None
    max_rel_gap: float | None
    in_branch: bool
    numeric_only: bool


def bihari_ode_check(kappa, scale: float, eps: float, horizon: float, n_eval: int = 257) -> BihariReport:
    """Integrate z' = scale * kappa(z), z(0) = eps, with a high-order method.

    eps = 0 returns the identically-zero path (the comparison argument pins
    the trivial solution).  When ``kappa`` is the concave log modulus and the
    path stays below its knee, the exact solution eps**exp(-scale*t) is
    attached for comparison; leaving the log branch flips ``numeric_only``.
    """
    if eps < 0:
        raise AnalysisError(f"initial value must be nonnegative, got {eps}")
    if horizon <= 0 or scale < 0:
        raise AnalysisError("need horizon > 0 and scale >= 0")
    times = np.linspace(0.0, horizon, n_eval)
    is_log_modulus = isinstance(kappa, ModulusKappaEta)
    if eps == 0.0:
        zeros = np.zeros_like(times)
        return BihariReport(
            times=times,
            path=zeros,
            closed_form=zeros.copy() if is_log_modulus else None,
            max_rel_gap=0.0 if is_log_modulus else None,
            in_branch=True,
            numeric_only=False,
        )
    sol = solve_ivp(
        lambda t, z: scale * np.asarray(kappa(z), dtype=np.float64),
        (0.0, horizon),
        [eps],
        method="DOP853",
        t_eval=times,
        rtol=1e-12,
        atol=0.0,
    )
    if not sol.success:
        raise AnalysisError(f"comparison ODE integration failed: {sol.message}")
    path = sol.y[0]
    if not is_log_modulus:
        return BihariReport(
            times=times, path=path, closed_form=None, max_rel_gap=None,
            in_branch=False, numeric_only=True,
        )
    closed = eps ** np.exp(-scale * times)
    in_branch = bool(closed[-1] <= kappa.eta and eps <= kappa.eta)
    if not in_branch:
        return BihariReport(
            times=times, path=path, closed_form=None, max_rel_gap=None,
            in_branch=False, numeric_only=True,
        )
    rel = np.abs(path - closed) / closed
    return BihariReport(
        times=times, path=path, closed_form=closed, max_rel_gap=float(rel.max()),
        in_branch=True, numeric_only=False,
    )


# ---------------------------------------------------------------------------
# law-gap curves and determinism replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LawGapReport:
    times: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    coupling: str


def law_gap_curve(
    traj_a: TrajectorySet,
    traj_b: TrajectorySet,
    dictionary: TestFunctionDictionary | None = None,
    coupling: str = "auto",
) -> LawGapReport:
    """Two-sided law gap per record point between two equal-size ensembles.

    The upper curve is a coupled mean distance; with ``coupling='auto'`` the
    one-dimensional case uses the monotone (sorted) pairing, the tightest
    order-one coupling available there, while higher dimensions keep the
    index pairing.  The lower curve maximizes over the validated dictionary.
    The sandwich lower <= upper is asserted pointwise.
    """
    if traj_a.n_particles != traj_b.n_particles or traj_a.dim != traj_b.dim:
        raise AnalysisError("trajectories have mismatched shapes")
    if not np.array_equal(traj_a.times, traj_b.times):
        raise AnalysisError("trajectories are recorded on different grids")
    if coupling not in ("auto", "index", "sorted"):
        raise AnalysisError(f"unknown coupling {coupling!r}")
    use_sorted = coupling == "sorted" or (coupling == "auto" and traj_a.dim == 1)
    if coupling == "sorted" and traj_a.dim != 1:
        raise AnalysisError("sorted coupling is available in dimension 1 only")
    if dictionary is None:
        dictionary = default_dictionary(traj_a.dim)
    uppers = np.empty(traj_a.times.shape[0])
    lowers = np.empty_like(uppers)
    for j in range(traj_a.times.shape[0]):
        a = traj_a.states[j]
        b = traj_b.states[j]
        mu = uniform_measure(a)
        nu = uniform_measure(b)
        if use_sorted:
            mu_c = uniform_measure(np.sort(a, axis=0))
            nu_c = uniform_measure(np.sort(b, axis=0))
        else:
            mu_c, nu_c = mu, nu
        uppers[j] = rho_upper(mu_c, nu_c)
        lowers[j] = rho_lower(mu, nu, dictionary)
        if lowers[j] > uppers[j] + 1e-9 * max(1.0, uppers[j]):
            raise AnalysisError(
                f"metric sandwich violated at t={traj_a.times[j]:.6g}: "
                f"lower {lowers[j]:.6g} > upper {uppers[j]:.6g}"
            )
    return LawGapReport(
        times=traj_a.times, upper=uppers, lower=lowers,
        coupling="sorted" if use_sorted else "index",
    )


@dataclass(frozen=True)
class UniquenessReport:
    passed: bool
    max_abs_gap: float


def uniqueness_replay(
    model: CoefficientModel,
    law: InitialLaw,
    seed: int,
    level: int,
    finest: int,
    n_particles: int,
    horizon: float,
    record_level: int | None = None,
) -> UniquenessReport:
    """Run the coupled pipeline twice; pass iff every recorded byte matches."""

    def run_once() -> TrajectorySet:
        lattice = sample_lattice(seed, n_particles, model.dim, finest, horizon)
        ens = sample_initial(law, n_particles, model.dim, seed)
        return em_run(model, ens, level, lattice, record_level=record_level)

    first = run_once()
    second = run_once()
    same = (
        first.states.tobytes() == second.states.tobytes()
        and first.times.tobytes() == second.times.tobytes()
    )
    gap = 0.0 if same else float(np.abs(first.states - second.states).max())
    return UniquenessReport(passed=same, max_abs_gap=gap)
