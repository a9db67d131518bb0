import numpy as np
import pytest

from mvsde.measure import EmpiricalMeasure


def random_measure(rng: np.random.Generator, n: int, dim: int, scale: float = 5.0) -> EmpiricalMeasure:
    pts = rng.uniform(-scale, scale, size=(n, dim))
    w = rng.uniform(0.1, 1.0, size=n)
    return EmpiricalMeasure(pts, w / w.sum())


def random_coupled_pair(rng: np.random.Generator, n: int, dim: int, scale: float = 5.0):
    """Two measures sharing weights entry by entry (index coupling valid)."""
    w = rng.uniform(0.1, 1.0, size=n)
    w = w / w.sum()
    a = EmpiricalMeasure(rng.uniform(-scale, scale, size=(n, dim)), w)
    b = EmpiricalMeasure(rng.uniform(-scale, scale, size=(n, dim)), w)
    return a, b


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
