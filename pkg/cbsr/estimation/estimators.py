"""Weighted average treatment effect estimators.

Every estimator consumes a ``WeightSet``; with signed weights s_i (+w for treated,
-w for controls) the IPW estimate is sum_i s_i Y_i.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator

from cbsr.core.errors import DataError
from cbsr.core.types import FloatArray, OutcomeFunction
from cbsr.enums.estimand import Estimand
from cbsr.models.dataset import Dataset
from cbsr.models.weights import Provenance, WeightSet


class EffectEstimate(BaseModel):
    """A point estimate with the weights it was computed from."""

    model_config = ConfigDict(frozen=True)

    tau_hat: float = Field(description="Estimated effect")
    normalized: bool = Field(description="Whether group-normalized weights were used")
    estimand: Estimand | None = Field(description="Estimand of the weighting rule", default=None)
    method: str = Field(description="ipw, aipw_att or aipw_ate", default="ipw")
    provenance: Provenance = Field(description="Origin of the weights")
    weight_norm: float = Field(description="Euclidean norm of the estimator weights", ge=0)
    se_plugin: float | None = Field(description="Plug-in noise SD sigma * ||w||_2", default=None)

    @field_validator("tau_hat")
    @classmethod
    def validate_tau(cls, value: float) -> float:
        """Validate that the estimate is finite.

        Args:
            value: The estimate

        Returns:
            The estimate

        Raises:
            ValueError: If the estimate is not finite
        """
        if not np.isfinite(value):
            raise ValueError("effect estimate is not finite")
        return value


def _outcome(ds: Dataset | ArrayLike, weights: WeightSet) -> FloatArray:
    y = ds.require_outcome() if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if y.shape != weights.t.shape:
        raise DataError(f"outcome has shape {y.shape}, weights have {weights.t.shape}")
    return y


def _covariates(ds: Dataset | FloatArray) -> FloatArray:
    return ds.x if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)


def _estimate(
    tau: float, weights: WeightSet, normalized: bool, method: str
) -> EffectEstimate:
    rule = weights.provenance.rule
    w = weights.normalized if normalized else weights.w
    return EffectEstimate(
        tau_hat=tau,
        normalized=normalized,
        estimand=None if rule is None else rule.estimand,
        method=method,
        provenance=weights.provenance,
        weight_norm=float(np.linalg.norm(w)),
    )


def ipw_estimate(
    ds: Dataset | ArrayLike, weights: WeightSet, normalized: bool = True
) -> EffectEstimate:
    """Weighted difference of outcome sums between treated and controls.

    Args:
        ds: Dataset with outcomes, or the outcome vector
        weights: Weight set
        normalized: Use weights normalized to sum to 1 within each group

    Returns:
        The estimate

    Raises:
        DataError: If outcomes are missing
    """
    y = _outcome(ds, weights)
    return _estimate(float(weights.signed(normalized) @ y), weights, normalized, "ipw")


def aipw_att(ds: Dataset, weights: WeightSet, g0_hat: OutcomeFunction) -> EffectEstimate:
    """Augmented estimator sum_{T=1} w (Y - g0) - sum_{T=0} w (Y - g0).

    Args:
        ds: Dataset with outcomes
        weights: Weight set, typically from the ATT rule
        g0_hat: Control outcome regression

    Returns:
        The estimate on group-normalized weights
    """
    y = _outcome(ds, weights)
    residual = y - g0_hat(ds.x)
    return _estimate(float(weights.signed() @ residual), weights, True, "aipw_att")


def aipw_ate(
    ds: Dataset, weights: WeightSet, g0_hat: OutcomeFunction, g1_hat: OutcomeFunction
) -> EffectEstimate:
    """Augmented estimator mean(g1 - g0) + sum_{T=1} w (Y - g1) - sum_{T=0} w (Y - g0).

    Args:
        ds: Dataset with outcomes
        weights: Weight set, typically from the ATE rule
        g0_hat: Control outcome regression
        g1_hat: Treated outcome regression

    Returns:
        The estimate on group-normalized weights
    """
    y = _outcome(ds, weights)
    g0 = g0_hat(ds.x)
    g1 = g1_hat(ds.x)
    residual = y - np.where(weights.t == 1, g1, g0)
    plug_in = float(np.mean(g1 - g0))
    return _estimate(plug_in + float(weights.signed() @ residual), weights, True, "aipw_ate")


@dataclass(frozen=True)
class BiasDecomposition:
    """Split of the estimation error into outcome imbalance and weighted noise."""

    bias: float
    noise: float
    error: float


def bias_decompose(
    ds: Dataset, weights: WeightSet, g0: OutcomeFunction, tau: float = 0.0
) -> BiasDecomposition:
    """Decompose tau_hat - tau for Y = g0(X) + tau * T + eps.

    Args:
        ds: Dataset with outcomes
        weights: Weight set (group-normalized weights are used)
        g0: True control outcome function
        tau: True constant effect

    Returns:
        bias = sum_i s_i g0(X_i), noise = sum_i s_i eps_i and error = tau_hat - tau
    """
    y = _outcome(ds, weights)
    s = weights.signed()
    g = g0(_covariates(ds))
    eps = y - g - tau * weights.t
    return BiasDecomposition(
        bias=float(s @ g), noise=float(s @ eps), error=float(s @ y) - tau
    )
