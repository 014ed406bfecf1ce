"""Logistic link and its clamped inverse."""

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import expit, logit

from cbsr.core.errors import DomainError
from cbsr.core.types import FloatArray

EPS = 1e-12


def link(p: ArrayLike) -> FloatArray:
    """Logistic link l(p) = log(p / (1 - p)).

    Args:
        p: Probabilities, strictly inside (0, 1)

    Returns:
        Linear predictor values

    Raises:
        DomainError: If any probability is outside (0, 1)
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("link is defined for probabilities strictly inside (0, 1)")
    return np.asarray(logit(arr), dtype=np.float64)


def link_inv(f: ArrayLike) -> FloatArray:
    """Inverse logistic link, clamped to [EPS, 1 - EPS].

    Args:
        f: Finite linear predictor values

    Returns:
        Probabilities
    """
    arr = np.asarray(f, dtype=np.float64)
    return np.clip(expit(arr), EPS, 1.0 - EPS)
