"""Shared fixtures: small confounded datasets and deterministic solver settings."""

import numpy as np
import pytest
from scipy.special import expit

from cbsr.core.config import SolverSettings
from cbsr.models.dataset import Dataset


def draw_instance(
    n: int = 200, d: int = 3, seed: int = 0, strength: float = 0.5, noise: float = 1.0
) -> Dataset:
    """Gaussian covariates, logistic treatment and a linear outcome with zero effect."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    coef = strength * np.linspace(1.0, -1.0, d) if d > 1 else np.array([strength])
    p = expit(x @ coef)
    t = (rng.uniform(size=n) < p).astype(np.int64)
    t[0], t[1] = 0, 1
    y = x @ np.ones(d) + noise * rng.standard_normal(n)
    return Dataset(x=x, t=t, y=y)


@pytest.fixture
def settings() -> SolverSettings:
    return SolverSettings(threads=1)


@pytest.fixture
def make_instance():
    return draw_instance


@pytest.fixture
def instance() -> Dataset:
    return draw_instance()
