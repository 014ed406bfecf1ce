"""Maximum-score estimation of GLM propensity models.

The fitted coefficients maximize (1/n) sum_i S(link_inv(phi_i' theta), T_i). At the
optimum the first-order conditions read sum_{T=1} w phi_k = sum_{T=0} w phi_k, i.e. the
induced weights exactly balance every column of the design.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DataError, NonConcaveRule, Separated
from cbsr.core.types import FloatArray, IntArray
from cbsr.fitting.newton import NewtonStatus, maximize, newton_direction
from cbsr.models.feature_map import DesignMatrix, as_design
from cbsr.models.weights import Provenance, WeightSet
from cbsr.scoring.link import link_inv
from cbsr.scoring.rules import ScoringRule, score_grad, score_hess, score_objective, weight

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False, kw_only=True)
class PropensityFit:
    """A fitted propensity model and its convergence metadata."""

    theta: FloatArray
    fitted_f: FloatArray
    fitted_p: FloatArray
    rule: ScoringRule
    converged: bool
    grad_norm: float
    iterations: int
    objective: float
    columns: tuple[str, ...]
    lambda_: float = 0.0

    def weights(self, t: ArrayLike) -> FloatArray:
        """Raw balancing weights w(X_i, T_i) at the fitted probabilities.

        Args:
            t: Treatment indicators

        Returns:
            Per-unit weights
        """
        return weight(self.rule, self.fitted_p, t)

    def weight_set(
        self, t: ArrayLike, fitter: str = "glm", rule: ScoringRule | None = None
    ) -> WeightSet:
        """Weights with provenance, optionally under another rule at the same p.

        Args:
            t: Treatment indicators
            fitter: Fitter identifier recorded in the provenance
            rule: Rule defining the weights, the fitting rule by default

        Returns:
            The weight set
        """
        rule = rule or self.rule
        w = weight(rule, self.fitted_p, t)
        return WeightSet.from_raw(
            w, np.asarray(t), Provenance(rule=rule, fitter=fitter, lambda_=self.lambda_)
        )


class ScoreProblem:
    """Average score of a linear predictor over a fixed design."""

    def __init__(self, design: FloatArray, t: IntArray, rule: ScoringRule) -> None:
        """Initialize the problem.

        Args:
            design: n x m feature matrix
            t: Treatment indicators
            rule: Scoring rule
        """
        self.phi = np.asarray(design, dtype=np.float64)
        self.t = np.asarray(t, dtype=np.int64)
        self.rule = rule
        self.n = self.phi.shape[0]

    def value(self, theta: FloatArray) -> float:
        """Average score at theta."""
        return float(np.mean(score_objective(self.rule, self.phi @ theta, self.t)))

    def gradient(self, theta: FloatArray) -> FloatArray:
        """Gradient (1/n) sum_i (2T_i - 1) w_i phi_i."""
        u = score_grad(self.rule, self.phi @ theta, self.t)
        return np.asarray(self.phi.T @ u / self.n, dtype=np.float64)

    def hessian(self, theta: FloatArray) -> FloatArray:
        """Hessian (1/n) Phi' diag(h) Phi."""
        h = score_hess(self.rule, self.phi @ theta, self.t)
        return np.asarray((self.phi * h[:, np.newaxis]).T @ self.phi / self.n, dtype=np.float64)


def check_rule(rule: ScoringRule) -> None:
    """Ensure the rule yields a concave fitting problem.

    Args:
        rule: Scoring rule

    Raises:
        NonConcaveRule: If alpha or beta lies outside [-1, 0]
    """
    if not rule.is_concave:
        raise NonConcaveRule(
            f"rule {rule} is not concave in the linear predictor; "
            "fitting requires -1 <= alpha, beta <= 0",
            alpha=rule.alpha,
            beta=rule.beta,
        )


def check_inputs(design: DesignMatrix, t: ArrayLike) -> IntArray:
    """Validate treatment against a design.

    Args:
        design: Design matrix
        t: Treatment indicators

    Returns:
        Treatment as an integer array

    Raises:
        DataError: On shape mismatch, non-binary treatment or an empty group
    """
    t_arr = np.asarray(t)
    if t_arr.shape != (design.values.shape[0],):
        raise DataError(
            f"treatment has shape {t_arr.shape}, design has {design.values.shape[0]} rows"
        )
    if not np.all(np.isin(t_arr, (0, 1))):
        raise DataError("treatment values must be 0 or 1")
    if t_arr.sum() == 0 or t_arr.sum() == t_arr.size:
        raise DataError("both treatment groups must be non-empty to fit a propensity model")
    if not np.all(np.isfinite(design.values)):
        raise DataError("design contains non-finite values")
    return t_arr.astype(np.int64)


class DivergenceCheck:
    """Flags coefficient vectors whose fit has run off towards p in {0, 1}."""

    def __init__(self, phi: FloatArray, bound: float) -> None:
        """Initialize the detector.

        Args:
            phi: Feature matrix
            bound: Limit on |f| and on standardized coefficients
        """
        self.phi = phi
        self.bound = bound
        sd = phi.std(axis=0)
        self.sd = np.where(sd > 0, sd, 0.0)

    def __call__(self, theta: FloatArray) -> bool:
        """Whether theta is beyond the separation bound."""
        if np.max(np.abs(theta * self.sd), initial=0.0) > self.bound:
            return True
        return bool(np.max(np.abs(self.phi @ theta)) > self.bound)


def fit_mle_score(
    design: DesignMatrix | FloatArray,
    t: ArrayLike,
    rule: ScoringRule,
    settings: SolverSettings | None = None,
    theta0: FloatArray | None = None,
) -> PropensityFit:
    """Fit a GLM propensity model by maximizing the average score.

    Args:
        design: Design matrix (intercept, if any, in column 0)
        t: Treatment indicators
        rule: Scoring rule with -1 <= alpha, beta <= 0
        settings: Solver settings
        theta0: Starting coefficients, zero by default

    Returns:
        The fitted model

    Raises:
        Separated: When the maximizer does not exist (quasi-separation or
            infeasible exact balance)
        SingularHessian: When the Hessian is rank deficient beyond jitter
    """
    settings = resolve(settings)
    check_rule(rule)
    dm = as_design(design)
    t_arr = check_inputs(dm, t)
    if np.linalg.matrix_rank(dm.values) < dm.m:
        raise DataError("design does not have full column rank; drop duplicate columns")

    problem = ScoreProblem(dm.values, t_arr, rule)
    start = np.zeros(dm.m) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    result = maximize(
        objective=problem.value,
        gradient=problem.gradient,
        direction=lambda th, g: newton_direction(problem.hessian(th), g, settings),
        x0=start,
        settings=settings,
        scales=dm.scales(),
        diverged=DivergenceCheck(dm.values, settings.separation_bound),
    )

    if result.status in (NewtonStatus.DIVERGED, NewtonStatus.MAX_ITER):
        raise Separated(
            f"score maximization under {rule} diverges after {result.iterations} iterations; "
            "exact balance is infeasible, regularize the fit",
            iterations=result.iterations,
        )
    if not result.converged:
        logger.warning(
            "fit under %s stopped at |g|=%.3g after %d iterations",
            rule,
            result.grad_norm,
            result.iterations,
        )

    f = dm.values @ result.x
    return PropensityFit(
        theta=result.x,
        fitted_f=f,
        fitted_p=link_inv(f),
        rule=rule,
        converged=result.converged,
        grad_norm=result.grad_norm,
        iterations=result.iterations,
        objective=result.value,
        columns=dm.columns,
    )


def balance_residual(
    fit: PropensityFit, design: DesignMatrix | FloatArray, t: ArrayLike
) -> FloatArray:
    """Weighted imbalance sum_{T=1} w phi_k - sum_{T=0} w phi_k of every column.

    Args:
        fit: Fitted model
        design: The design it was fitted on
        t: Treatment indicators

    Returns:
        One entry per column
    """
    dm = as_design(design)
    t_arr = np.asarray(t)
    w = fit.weights(t_arr)
    signed = np.where(t_arr == 1, w, -w)
    return np.asarray(dm.values.T @ signed, dtype=np.float64)
