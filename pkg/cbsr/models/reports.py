"""Machine readable reports emitted by the command line interface."""

import math
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator

from cbsr.estimation.estimators import EffectEstimate
from cbsr.estimation.inference import HonestCI
from cbsr.scoring.rules import ScoringRule


class FeatureBalance(BaseModel):
    """Balance of one feature under a set of weights."""

    model_config = ConfigDict(frozen=True)

    feature: str = Field(description="Feature name")
    std_diff: float = Field(description="Standardized difference in percent")
    ks: float = Field(description="Weighted Kolmogorov-Smirnov statistic", ge=0.0, le=1.0)


class BalanceReport(BaseModel):
    """Covariate balance of a weight set."""

    model_config = ConfigDict(frozen=True)

    features: list[FeatureBalance] = Field(description="Per-feature balance")
    max_abs_std_diff: float = Field(description="Largest absolute standardized difference")
    max_ks: float = Field(description="Largest weighted KS statistic")
    max_abs_imbalance: float = Field(
        description="Largest |weighted mean difference| on the feature scale"
    )
    dual_gap: float | None = Field(description="Primal-dual objective gap, if any", default=None)

    @field_validator("max_abs_std_diff", "max_ks", "max_abs_imbalance")
    @classmethod
    def validate_finite(cls, value: float) -> float:
        """Validate that summary statistics are finite.

        Args:
            value: The statistic

        Returns:
            The statistic

        Raises:
            ValueError: If the statistic is not finite
        """
        if not math.isfinite(value):
            raise ValueError("balance statistics must be finite")
        return value

    def to_frame_records(self) -> list[dict[str, Any]]:
        """Rows for tabular output."""
        return [fb.model_dump() for fb in self.features]


class FitReport(BaseModel):
    """Result of fitting a propensity model."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    fitter: str = Field(description="Propensity fitter")
    rule: ScoringRule = Field(description="Fitting rule")
    estimand: str = Field(description="Estimand of the fitting rule")
    converged: bool = Field(description="Whether the solver met its tolerance")
    iterations: int | None = Field(description="Solver iterations", default=None)
    objective: float | None = Field(description="Average score at the solution", default=None)
    columns: list[str] = Field(description="Design columns", default_factory=list)
    coefficients: list[float] = Field(description="Fitted coefficients", default_factory=list)
    lambda_: float | None = Field(description="Penalty level", default=None, alias="lambda")
    max_abs_balance_residual: float | None = Field(
        description="Largest |imbalance| of a design column under the fitting weights",
        default=None,
    )
    hnorm: float | None = Field(description="RKHS norm of the fitted predictor", default=None)
    max_bias: float | None = Field(
        description="Worst-case bias of the normalized estimator over unit-norm outcomes",
        default=None,
    )
    weight_cv: float = Field(description="Coefficient of variation of the weights", ge=0)
    n_trees: int | None = Field(description="Accepted boosting trees", default=None)
    skipped: int | None = Field(description="Skipped boosting iterations", default=None)
    balance: BalanceReport = Field(description="Covariate balance under the weights")
    config: dict[str, Any] = Field(description="Resolved run configuration with seed")


class EstimateReport(BaseModel):
    """Effect estimate with its intervals."""

    model_config = ConfigDict(frozen=True)

    estimate: EffectEstimate = Field(description="Point estimate")
    sigma_hat: float = Field(description="Noise SD used by the intervals", ge=0)
    naive: HonestCI = Field(description="Interval ignoring residual imbalance")
    honest: HonestCI | None = Field(description="Interval adding the max bias", default=None)
    max_bias_factor: float | None = Field(
        description="Worst-case imbalance over unit-norm outcome functions", default=None
    )
    n_estimation: int = Field(description="Units the estimate is computed on", ge=1)
    config: dict[str, Any] = Field(description="Resolved run configuration with seed")


class CellMetrics(BaseModel):
    """Aggregates of one method over the replicates of one simulation cell."""

    model_config = ConfigDict(frozen=True)

    cell: str = Field(description="Simulation cell")
    method: str = Field(description="Method label")
    replicates: int = Field(description="Replicates attempted", ge=0)
    n_failed: int = Field(description="Replicates whose fit or estimate failed", ge=0)
    flagged: bool = Field(description="More than 10% of the replicates failed")
    rmse: float | None = Field(description="Root mean square error", default=None)
    bias: float | None = Field(description="Absolute mean error", default=None)
    mean_abs_error: float | None = Field(description="Mean absolute error", default=None)
    max_bias: float | None = Field(description="Mean bias half-width", default=None)
    coverage_naive: float | None = Field(description="Coverage of the naive interval", default=None)
    coverage_honest: float | None = Field(
        description="Coverage of the honest interval", default=None
    )
    ci_ratio: float | None = Field(
        description="Mean ratio of honest to naive interval length", default=None
    )


class DiagnoseReport(BaseModel):
    """Balance before and after weighting."""

    model_config = ConfigDict(frozen=True)

    unweighted: BalanceReport = Field(description="Balance of the raw groups")
    weighted: BalanceReport = Field(description="Balance under the fitted weights")
    max_dual_weight_discrepancy: float | None = Field(
        description="Largest normalized weight difference to the dual solver", default=None
    )
    config: dict[str, Any] = Field(description="Resolved run configuration with seed")
