"""From a method configuration to weights and an effect estimate.

The replication runner and the command line share these helpers, so a single
simulated replicate and an ``estimate`` run on the same data agree exactly.
"""

import logging
from dataclasses import dataclass
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import ConfigError
from cbsr.core.types import FloatArray, IntArray, OutcomeFunction
from cbsr.enums.design import OutcomeModelKind
from cbsr.enums.estimand import Estimand
from cbsr.enums.fitter_kind import FitterKind
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.estimation.estimators import EffectEstimate, aipw_ate, aipw_att, ipw_estimate
from cbsr.estimation.inference import sigma_hat
from cbsr.estimation.outcome import fit_group_outcomes, fit_outcome_model, outcome_coefficients
from cbsr.fitting.boost import TreeEnsemble, fit_boost
from cbsr.fitting.glm import PropensityFit, fit_mle_score
from cbsr.fitting.kernel import (
    Kernel,
    KernelFit,
    fit_rkhs,
    fit_rkhs_until_cv,
    rkhs_max_bias,
    rkhs_norm,
)
from cbsr.fitting.regularized import (
    RegularizedFit,
    fit_penalized,
    fit_until_cv,
    imbalance_bound,
)
from cbsr.fitting.stepwise import StepwisePath, forward_stepwise
from cbsr.models.dataset import Dataset
from cbsr.models.feature_map import DesignMatrix, FeatureMap, expand
from cbsr.models.weights import Provenance, WeightSet
from cbsr.scoring.rules import ScoringRule, weight

logger = logging.getLogger(__name__)

type FitResult = PropensityFit | StepwisePath | TreeEnsemble | None


class MethodConfig(BaseModel):
    """One way of turning data into weights and an estimate."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    name: str = Field(description="Label used in reports", default="")
    fitter: FitterKind = Field(description="Propensity fitter", default=FitterKind.GLM)
    estimand: str = Field(description="ate, att, atc, owate or custom:a,b", default="att")
    weight_estimand: str | None = Field(
        description="Rule defining the reported weights, the fitting rule by default",
        default=None,
    )
    lambda_: float | None = Field(
        description="Fixed penalty level", default=None, gt=0, alias="lambda"
    )
    cv_target: float | None = Field(
        description="Choose the penalty (or stop boosting) at this weight CV", default=None, gt=0
    )
    kernel: Kernel | None = Field(description="Kernel of rkhs fits", default=None)
    k_max: int = Field(description="Columns added by stepwise selection", default=4, ge=0)
    depth: int = Field(description="Boosting tree depth", default=1, ge=1, le=3)
    n_trees: int = Field(description="Boosting iterations", default=100, ge=0)
    shrinkage: float = Field(description="Boosting shrinkage", default=0.1, gt=0, le=1)
    outcome_model: OutcomeModelKind | None = Field(
        description="Outcome regression for augmentation, None for plain IPW", default=None
    )
    features: FeatureMap = Field(
        description="Design built from the covariates", default_factory=FeatureMap
    )

    @model_validator(mode="after")
    def validate_fitter_options(self) -> Self:
        """Validate that the fitter has what it needs.

        Returns:
            The validated model instance

        Raises:
            ValueError: If a required option is missing or conflicting
        """
        ScoringRule.parse(self.estimand)
        if self.weight_estimand is not None:
            ScoringRule.parse(self.weight_estimand)
        if self.fitter is FitterKind.RKHS and self.kernel is None:
            raise ValueError("fitter rkhs requires a kernel")
        if self.fitter in (FitterKind.L1, FitterKind.L2, FitterKind.RKHS):
            if (self.lambda_ is None) == (self.cv_target is None):
                raise ValueError(
                    f"fitter {self.fitter.value} needs exactly one of lambda or cv_target"
                )
            # The certified bias bound holds for the fitting rule's own weights only.
            if self.weight_rule != self.rule:
                raise ValueError(
                    f"fitter {self.fitter.value} reports weights under its fitting rule; "
                    "weight_estimand must be omitted or equal to estimand"
                )
        if self.outcome_model is OutcomeModelKind.KERNEL and self.kernel is None:
            raise ValueError("a kernel outcome model requires a kernel")

        return self

    @property
    def rule(self) -> ScoringRule:
        """The fitting rule."""
        return ScoringRule.parse(self.estimand)

    @property
    def weight_rule(self) -> ScoringRule:
        """The rule defining the estimator weights."""
        return ScoringRule.parse(self.weight_estimand or self.estimand)

    @property
    def penalty_norm(self) -> PenaltyNorm:
        """Norm whose dual bounds the bias: L1 for lasso fits, L2 otherwise."""
        return PenaltyNorm.L1 if self.fitter is FitterKind.L1 else PenaltyNorm.L2

    @property
    def label(self) -> str:
        """Name, or a description built from the options."""
        if self.name:
            return self.name
        parts = [self.fitter.value, self.estimand]
        if self.kernel is not None:
            parts.append(str(self.kernel))
        if self.outcome_model is not None:
            parts.append(f"aipw-{self.outcome_model.value}")
        return "/".join(parts)


@dataclass(frozen=True, eq=False)
class FittedWeights:
    """Estimator weights with the fit they came from.

    ``bias_factor`` is the worst-case imbalance of the group-normalized weights over
    unit-norm outcome functions, or None when the fit does not certify one.
    """

    weights: WeightSet
    fit: FitResult
    bias_factor: float | None
    lambda_: float | None = None


def design_for(ds: Dataset, method: MethodConfig) -> DesignMatrix:
    """Design matrix declared by the method's feature map."""
    return expand(ds, method.features)


def _penalized(
    dm: DesignMatrix, t: IntArray, method: MethodConfig, settings: SolverSettings
) -> RegularizedFit:
    norm = method.penalty_norm
    if method.lambda_ is not None:
        return fit_penalized(dm, t, method.rule, method.lambda_, norm, settings=settings)
    assert method.cv_target is not None
    search = fit_until_cv(dm, t, method.rule, method.cv_target, norm, settings=settings)
    logger.debug("selected lambda=%.4g at CV %.3f", search.lambda_, search.cv)
    return search.fit


def _kernel(ds: Dataset, method: MethodConfig, settings: SolverSettings) -> KernelFit:
    assert method.kernel is not None
    if method.lambda_ is not None:
        return fit_rkhs(ds, ds.t, method.kernel, method.rule, method.lambda_, settings=settings)
    assert method.cv_target is not None
    search = fit_rkhs_until_cv(
        ds, ds.t, method.kernel, method.rule, method.cv_target, settings=settings
    )
    logger.debug("selected lambda=%.4g at CV %.3f", search.lambda_, search.cv)
    return search.fit


def fit_weights(
    ds: Dataset,
    method: MethodConfig,
    design: DesignMatrix | None = None,
    true_p: FloatArray | None = None,
    settings: SolverSettings | None = None,
) -> FittedWeights:
    """Fit the method's propensity model and build its estimator weights.

    Args:
        ds: Dataset
        method: Method configuration
        design: Design to fit on, built from ``method.features`` by default
        true_p: True propensity scores, required by the oracle fitter
        settings: Solver settings

    Returns:
        The weights, the fit and the bias factor where one is certified

    Raises:
        ConfigError: If the oracle fitter has no true propensity scores
    """
    settings = resolve(settings)
    ds.require_both_groups()
    dm = design if design is not None else design_for(ds, method)
    fitter = method.fitter.value
    t = ds.t

    match method.fitter:
        case FitterKind.ORACLE:
            if true_p is None:
                raise ConfigError("the oracle fitter needs the true propensity scores")
            rule = method.weight_rule
            provenance = Provenance(rule=rule, fitter=fitter)
            return FittedWeights(
                weights=WeightSet.from_raw(weight(rule, true_p, t), t, provenance),
                fit=None,
                bias_factor=None,
            )
        case FitterKind.GLM:
            fit = fit_mle_score(dm, t, method.rule, settings=settings)
            ws = fit.weight_set(t, fitter=fitter, rule=method.weight_rule)
            return FittedWeights(weights=ws, fit=fit, bias_factor=None)
        case FitterKind.STEPWISE:
            path = forward_stepwise(
                dm, t, method.rule, method.k_max, weight_rule=method.weight_rule, settings=settings
            )
            ws = path.final.weight_set(t, fitter=fitter, rule=method.weight_rule)
            return FittedWeights(weights=ws, fit=path, bias_factor=None)
        case FitterKind.L1 | FitterKind.L2:
            reg = _penalized(dm, t, method, settings)
            bound = imbalance_bound(reg)
            return FittedWeights(
                weights=reg.weight_set(t, fitter=fitter),
                fit=reg,
                bias_factor=bound.normalized_max_bias,
                lambda_=reg.lambda_,
            )
        case FitterKind.RKHS:
            kfit = _kernel(ds, method, settings)
            return FittedWeights(
                weights=kfit.weight_set(t, fitter=fitter),
                fit=kfit,
                bias_factor=rkhs_max_bias(kfit, normalized=True),
                lambda_=kfit.lambda_,
            )
        case _:
            ens = fit_boost(
                ds,
                t,
                method.rule,
                depth=method.depth,
                n_trees=method.n_trees,
                shrinkage=method.shrinkage,
                cv_target=method.cv_target,
                settings=settings,
            )
            return FittedWeights(
                weights=ens.weight_set(t, rule=method.weight_rule), fit=ens, bias_factor=None
            )


def estimate_effect(
    ds: Dataset,
    fitted: FittedWeights,
    method: MethodConfig,
    outcome_data: Dataset | None = None,
    seed: int | None = None,
) -> tuple[EffectEstimate, OutcomeFunction | None]:
    """Weighted (and optionally augmented) effect estimate.

    Args:
        ds: Dataset with outcomes, aligned with the weights
        fitted: Weights from ``fit_weights``
        method: Method configuration
        outcome_data: Rows to fit the outcome regressions on, ``ds`` by default
        seed: Seed of the outcome regressions' cross-validation folds

    Returns:
        The estimate and the control outcome regression (None for plain IPW)

    Raises:
        ConfigError: If augmentation is requested for an estimand other than ATT or ATE
    """
    if method.outcome_model is None:
        return ipw_estimate(ds, fitted.weights), None

    estimand = method.weight_rule.estimand
    if estimand not in (Estimand.ATT, Estimand.ATE):
        raise ConfigError(
            f"outcome augmentation is available for ATT and ATE weights, not {estimand.value}"
        )
    g0, g1 = fit_group_outcomes(
        outcome_data if outcome_data is not None else ds,
        method.outcome_model,
        kernel=method.kernel,
        seed=seed,
    )
    if estimand is Estimand.ATT:
        return aipw_att(ds, fitted.weights, g0), g0
    return aipw_ate(ds, fitted.weights, g0, g1), g0


def estimate_sigma(ds: Dataset, g0_hat: OutcomeFunction | None) -> float:
    """Noise SD estimate: control residual SD when a control regression exists, else pooled."""
    if g0_hat is None:
        return sigma_hat(ds)
    control = ds.subset(np.flatnonzero(ds.t == 0))
    return sigma_hat(control, g0_hat)


def plugin_norm_cl(
    ds: Dataset,
    method: MethodConfig,
    fitted: FittedWeights,
    design: DesignMatrix,
    seed: int | None = None,
) -> float | None:
    """Norm of a control outcome regression, a plug-in (non-honest) norm limit.

    Args:
        ds: Dataset the weights were fitted on, with outcomes
        method: Method configuration
        fitted: Fitted weights
        design: Design of the propensity fit
        seed: Seed of the regression's cross-validation folds

    Returns:
        ||coef||_a of a lasso or ridge regression for penalized linear fits, the RKHS
        norm of a kernel regression under the fit's Gram matrix for kernel fits, None
        when the fit certifies no bias bound
    """
    control = ds.t == 0
    y = ds.require_outcome()
    if method.fitter in (FitterKind.L1, FitterKind.L2):
        body = design.values[:, 1:] if design.intercept else design.values
        lasso = method.penalty_norm is PenaltyNorm.L1
        kind = OutcomeModelKind.LASSO if lasso else OutcomeModelKind.RIDGE
        coef = outcome_coefficients(body[control], y[control], kind, seed=seed)
        return float(np.linalg.norm(coef, ord=method.penalty_norm.exponent))
    if isinstance(fitted.fit, KernelFit):
        g = fit_outcome_model(
            ds.x[control], y[control], OutcomeModelKind.KERNEL, kernel=fitted.fit.kernel
        )
        return rkhs_norm(fitted.fit.gram, g(ds.x))
    return None
