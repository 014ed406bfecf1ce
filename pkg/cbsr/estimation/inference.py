"""Confidence intervals that account for residual covariate imbalance.

The honest interval adds the worst-case bias (max-bias factor times a confidence
limit on the outcome function's norm) to the Gaussian noise half-width.
"""

from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import ndtri

from cbsr.core.errors import DomainError
from cbsr.core.types import IntArray, OutcomeFunction
from cbsr.enums.design import NormCLMode
from cbsr.estimation.estimators import EffectEstimate
from cbsr.models.dataset import Dataset

_MIN_UNITS = 4


class HonestCI(BaseModel):
    """Interval center +/- (bias half-width + noise half-width)."""

    model_config = ConfigDict(frozen=True)

    center: float = Field(description="Point estimate")
    half_width_bias: float = Field(description="Max-bias factor times the norm limit", ge=0)
    half_width_noise: float = Field(description="sigma * ||w||_2 * z", ge=0)
    level: float = Field(description="Coverage level 1 - alpha", gt=0, lt=1)
    norm_cl_mode: NormCLMode | None = Field(
        description="Source of the norm confidence limit, None for the naive interval",
        default=None,
    )

    @model_validator(mode="after")
    def validate_honesty_label(self) -> Self:
        """Validate that a bias half-width comes with its mode.

        Returns:
            The validated model instance

        Raises:
            ValueError: If a positive bias half-width has no mode
        """
        if self.half_width_bias > 0 and self.norm_cl_mode is None:
            raise ValueError("a bias half-width needs the mode of its norm confidence limit")

        return self

    @property
    def half_width(self) -> float:
        """Total half-width."""
        return self.half_width_bias + self.half_width_noise

    @property
    def lower(self) -> float:
        """Lower limit."""
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        """Upper limit."""
        return self.center + self.half_width

    @property
    def honest(self) -> bool:
        """Whether the bias term rests on an honest norm bound."""
        return self.norm_cl_mode in (NormCLMode.ORACLE, NormCLMode.CONSTANT)

    def covers(self, value: float) -> bool:
        """Whether the interval contains a value."""
        return self.lower <= value <= self.upper


def normal_quantile(level: float) -> float:
    """Two-sided standard normal quantile z_{1 - alpha/2} for coverage ``level``."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 + level / 2.0))


def naive_ci(estimate: EffectEstimate, sigma_hat: float, level: float = 0.95) -> HonestCI:
    """Interval ignoring imbalance: center +/- sigma * ||w||_2 * z.

    Args:
        estimate: Point estimate with its weight norm
        sigma_hat: Noise SD
        level: Coverage level

    Returns:
        The interval, with a zero bias half-width

    Raises:
        DomainError: If sigma_hat is negative
    """
    if not sigma_hat >= 0:
        raise DomainError(f"sigma_hat must be nonnegative, got {sigma_hat}")
    return HonestCI(
        center=estimate.tau_hat,
        half_width_bias=0.0,
        half_width_noise=sigma_hat * estimate.weight_norm * normal_quantile(level),
        level=level,
    )


def honest_ci(
    estimate: EffectEstimate,
    bias_factor: float,
    norm_cl: float,
    sigma_hat: float,
    level: float = 0.95,
    mode: NormCLMode | str = NormCLMode.CONSTANT,
) -> HonestCI:
    """Interval center +/- (bias_factor * norm_cl + sigma * ||w||_2 * z).

    Args:
        estimate: Point estimate with its weight norm
        bias_factor: Worst-case imbalance over unit-norm outcome functions, on the
            scale of the estimator's weights
        norm_cl: Upper confidence limit for the outcome function's norm
        sigma_hat: Noise SD
        level: Coverage level
        mode: Where ``norm_cl`` came from

    Returns:
        The interval

    Raises:
        DomainError: If any input is negative
    """
    for name, value in (("bias_factor", bias_factor), ("norm_cl", norm_cl)):
        if not value >= 0:
            raise DomainError(f"{name} must be nonnegative, got {value}")
    naive = naive_ci(estimate, sigma_hat, level)
    return HonestCI(
        center=naive.center,
        half_width_bias=bias_factor * norm_cl,
        half_width_noise=naive.half_width_noise,
        level=level,
        norm_cl_mode=NormCLMode(mode),
    )


def sigma_hat(ds: Dataset, g_hat: OutcomeFunction | None = None) -> float:
    """Plug-in noise SD.

    With a regression, the SD of the residuals Y - g_hat(X); otherwise the pooled
    within-group SD, which is conservative.

    Args:
        ds: Dataset with outcomes
        g_hat: Outcome regression, applied to all rows

    Returns:
        The estimate

    Raises:
        DomainError: If there are fewer than 4 units
    """
    y = ds.require_outcome()
    if ds.n < _MIN_UNITS:
        raise DomainError(f"sigma_hat needs at least {_MIN_UNITS} units, got {ds.n}")
    if g_hat is not None:
        return float(np.std(y - g_hat(ds.x), ddof=1))
    ss = 0.0
    groups = 0
    for group in (0, 1):
        yg = y[ds.t == group]
        if yg.size:
            ss += float(np.sum((yg - yg.mean()) ** 2))
            groups += 1
    return float(np.sqrt(ss / (ds.n - groups)))


def split_sample(
    n: int, fraction: float = 0.5, seed: int | None = None
) -> tuple[IntArray, IntArray]:
    """Random partition of range(n) into two parts.

    Args:
        n: Number of units
        fraction: Share of units in the first part
        seed: Random seed

    Returns:
        Sorted indices of the first and second part

    Raises:
        DomainError: If either part would be empty
    """
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"split fraction must lie in (0, 1), got {fraction}")
    size = int(round(fraction * n))
    if size == 0 or size == n:
        raise DomainError(f"a {fraction:g} split of {n} units leaves a part empty")
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:size]).astype(np.int64), np.sort(order[size:]).astype(np.int64)
