"""Weighted empirical measures and two-sided estimates of the dual-ball metric.

A law is represented by a finite weighted support.  The metric of interest is
a supremum over test functions whose "weighted sup plus Lipschitz" norm is at
most one; that supremum is not computable exactly, so this module brackets it:

* ``rho_upper`` -- the coupled mean distance over an index-matched pair, an
  upper bound for any coupling of the two measures;
* ``rho_lower`` -- the same supremum restricted to a finite, validated
  dictionary of norm-one test functions, hence a lower bound.

All cross-particle reductions use :func:`math.fsum`, which returns the
correctly rounded sum and is therefore independent of particle order and of
caller threading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MeasureError",
    "CouplingError",
    "EmpiricalMeasure",
    "TestFunction",
    "TestFunctionDictionary",
    "ValidationReport",
    "dirac",
    "uniform_measure",
    "lambda2_norm_squared",
    "rho_upper",
    "rho_lower",
    "validate_test_function",
    "default_dictionary",
]

#: permitted deviation of the total mass from 1
WEIGHT_TOL = 1e-12

#: slack for the "norm at most one" validation verdict
NORM_SLACK = 1e-9


class MeasureError(ValueError):
    """Invalid measure, dictionary or test-function input."""


class CouplingError(MeasureError):
    """Index coupling unavailable: supports or weights are not matched."""


def _fsum(values: np.ndarray) -> float:
    # correctly rounded, hence permutation invariant
    return math.fsum(values.tolist())


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Probability measure with finite support ``support`` and ``weights``.

    ``support`` has shape (N, d); a 1-d array is interpreted as N scalar
    atoms.  Weights must be nonnegative and sum to one within ``WEIGHT_TOL``.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim == 1:
            support = support[:, None]
        if support.ndim != 2 or support.shape[0] < 1 or support.shape[1] < 1:
            raise MeasureError(f"support must be (N, d) with N,d >= 1, got shape {support.shape}")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (support.shape[0],):
            raise MeasureError(
                f"weights shape {weights.shape} does not match {support.shape[0]} support points"
            )
        bad = ~np.isfinite(support)
        if bad.any():
            idx = int(np.nonzero(bad.any(axis=1))[0][0])
            raise MeasureError(f"non-finite coordinate in support point {idx}: {support[idx]}")
        if (weights < 0).any():
            idx = int(np.nonzero(weights < 0)[0][0])
            raise MeasureError(f"negative weight at index {idx}: {weights[idx]}")
        total = _fsum(weights)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise MeasureError(f"weights sum to {total!r}, not 1 within {WEIGHT_TOL}")
        support = support.copy()
        weights = weights.copy()
        support.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)
        if not np.isfinite(self.lambda2):
            raise MeasureError("weighted mass norm is not finite")

    @property
    def num_atoms(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @cached_property
    def radii(self) -> np.ndarray:
        """Euclidean norm of every support point."""
        r = np.linalg.norm(self.support, axis=1)
        r.flags.writeable = False
        return r

    @cached_property
    def mean(self) -> np.ndarray:
        """Barycenter, exactly rounded per coordinate."""
        m = np.array(
            [_fsum(self.weights * self.support[:, k]) for k in range(self.dim)]
        )
        m.flags.writeable = False
        return m

    @cached_property
    def lambda2(self) -> float:
        """Weighted mass norm squared: sum of w_i * (1 + |x_i|)^2."""
        return _fsum(self.weights * (1.0 + self.radii) ** 2)

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """Exactly rounded integral of a vectorized test function."""
        vals = np.asarray(fn(self.support), dtype=np.float64)
        if vals.shape != (self.num_atoms,):
            raise MeasureError(f"test function returned shape {vals.shape}, expected ({self.num_atoms},)")
        return _fsum(self.weights * vals)


def dirac(x) -> EmpiricalMeasure:
    """Point mass at ``x`` (scalar or vector)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return EmpiricalMeasure(x[None, :], np.array([1.0]))


def uniform_measure(points: np.ndarray) -> EmpiricalMeasure:
    """Uniform weights 1/N on the given support points."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    return EmpiricalMeasure(points, np.full(n, 1.0 / n))


def lambda2_norm_squared(mu: EmpiricalMeasure) -> float:
    """Weighted mass norm squared; at least 1 for probability measures."""
    return mu.lambda2


def _require_coupled(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.num_atoms != nu.num_atoms:
        raise CouplingError(f"atom counts differ: {mu.num_atoms} vs {nu.num_atoms}")
    if mu.dim != nu.dim:
        raise CouplingError(f"dimensions differ: {mu.dim} vs {nu.dim}")
    if not np.array_equal(mu.weights, nu.weights):
        raise CouplingError("weights differ entry by entry; index coupling unavailable")


def rho_upper(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Coupled mean distance sum(w_i |x_i - y_i|) under the index coupling.

    Upper-bounds the dual-ball metric whenever the index pairing is a valid
    coupling of the two measures (equal weights entry by entry).
    """
    _require_coupled(mu, nu)
    gaps = np.linalg.norm(mu.support - nu.support, axis=1)
    return _fsum(mu.weights * gaps)


def rho_lower(mu: EmpiricalMeasure, nu: EmpiricalMeasure, dictionary: "TestFunctionDictionary") -> float:
    """Best integral gap over a validated dictionary of norm-one test functions."""
    if len(dictionary.entries) == 0:
        raise MeasureError("empty test-function dictionary")
    dictionary.require_validated()
    best = 0.0
    for entry in dictionary.entries:
        gap = abs(mu.integrate(entry.fn) - nu.integrate(entry.fn))
        if gap > best:
            best = gap
    return best


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    lip_estimate: float
    weighted_sup_estimate: float
    norm_estimate: float
    n_samples: int
    reason: str = ""


@dataclass(frozen=True)
class TestFunction:
    """Vectorized test function with a declared norm bound at most one."""

    __test__ = False  # not a pytest collection target

    tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.bound <= 1.0):
            raise MeasureError(f"entry {self.tag!r}: declared bound {self.bound} exceeds 1")


@dataclass
class TestFunctionDictionary:
    __test__ = False  # not a pytest collection target

    entries: tuple[TestFunction, ...]
    validated: bool = False

    def __init__(self, entries: Sequence[TestFunction], validated: bool = False) -> None:
        self.entries = tuple(entries)
        self.validated = bool(validated)

    def require_validated(self) -> None:
        if not self.validated:
            raise MeasureError(
                "dictionary has not been validated; call validate() or use default_dictionary()"
            )

    def validate(self, lo, hi, n_samples: int = 512, seed: int = 0) -> list[ValidationReport]:
        """Validate every entry by sampling; raises naming the first bad entry."""
        reports = []
        for entry in self.entries:
            report = validate_test_function(entry.fn, lo, hi, n_samples=n_samples, seed=seed)
            if not report.passed:
                raise MeasureError(
                    f"dictionary entry {entry.tag!r} failed validation: "
                    f"norm estimate {report.norm_estimate:.6g} ({report.reason or 'exceeds 1'})"
                )
            reports.append(report)
        self.validated = True
        return reports


def validate_test_function(
    fn: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    n_samples: int = 512,
    seed: int = 0,
) -> ValidationReport:
    """Monte-Carlo estimate of the weighted-sup and Lipschitz norm terms.

    Samples points uniformly in the box [lo, hi]^d together with random and
    short-displacement pairs; passes iff the estimated norm is at most
    1 + ``NORM_SLACK``.  The estimate is a lower bound of the true norm, so a
    failure is conclusive while a pass certifies only "no violation found".
    """
    if n_samples < 100:
        raise MeasureError(f"need at least 100 samples, got {n_samples}")
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if lo.shape != hi.shape or (hi <= lo).any():
        raise MeasureError("invalid sample box")
    dim = lo.shape[0]
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, dim))
    vals = np.asarray(fn(pts), dtype=np.float64)
    if not np.isfinite(vals).all():
        idx = int(np.nonzero(~np.isfinite(vals))[0][0])
        return ValidationReport(
            passed=False,
            lip_estimate=math.nan,
            weighted_sup_estimate=math.nan,
            norm_estimate=math.nan,
            n_samples=n_samples,
            reason=f"non-finite value at sample {pts[idx]}",
        )
    radii = np.linalg.norm(pts, axis=1)
    sup_est = float(np.max(np.abs(vals) / (1.0 + radii) ** 2))

    # Lipschitz term: long random pairs plus short displacements around each
    # sample (the short pairs catch local steepness the long ones miss).
    perm = rng.permutation(n_samples)
    keep = np.linalg.norm(pts - pts[perm], axis=1) > 0
    lip = 0.0
    if keep.any():
        num = np.abs(vals - vals[perm])[keep]
        den = np.linalg.norm(pts - pts[perm], axis=1)[keep]
        lip = float(np.max(num / den))
    step = 1e-4 * float(np.max(hi - lo))
    dirs = rng.standard_normal((n_samples, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    shifted = pts + step * dirs
    vals_s = np.asarray(fn(shifted), dtype=np.float64)
    if not np.isfinite(vals_s).all():
        return ValidationReport(False, math.nan, math.nan, math.nan, n_samples, "non-finite value at shifted sample")
    gaps = np.linalg.norm(shifted - pts, axis=1)
    lip = max(lip, float(np.max(np.abs(vals_s - vals) / gaps)))

    norm_est = lip + sup_est
    return ValidationReport(
        passed=norm_est <= 1.0 + NORM_SLACK,
        lip_estimate=lip,
        weighted_sup_estimate=sup_est,
        norm_estimate=norm_est,
        n_samples=n_samples,
    )


def default_dictionary(dim: int, radius: float = 10.0) -> TestFunctionDictionary:
    """Dictionary of norm-one test functions, valid by construction.

    Coordinate projections, clipped coordinate ramps and a clipped radial
    function, each scaled by 0.8: their Lipschitz constant is then 0.8 and the
    weighted sup term peaks at 0.8 * 1/4 (at radius one), so the norm is
    exactly one for any ``radius >= 1``.
    """
    if dim < 1:
        raise MeasureError("dimension must be at least 1")
    if radius < 1.0:
        raise MeasureError("clip radius below 1 would change the norm calibration")
    entries: list[TestFunction] = []

    def _coord(k: int) -> Callable[[np.ndarray], np.ndarray]:
        return lambda pts: 0.8 * pts[:, k]

    def _ramp(k: int) -> Callable[[np.ndarray], np.ndarray]:
        return lambda pts: 0.8 * np.clip(pts[:, k], -radius, radius)

    for k in range(dim):
        entries.append(TestFunction(tag=f"coord{k}", fn=_coord(k)))
        entries.append(TestFunction(tag=f"ramp{k}", fn=_ramp(k)))
    entries.append(
        TestFunction(
            tag="radial",
            fn=lambda pts: 0.8 * np.minimum(np.linalg.norm(pts, axis=1), radius),
        )
    )
    return TestFunctionDictionary(entries, validated=True)
