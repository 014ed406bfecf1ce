"""Penalized score maximization with lasso and ridge penalties.

The fitted coefficients maximize

    (1/n) sum_i S(link_inv(phi_i' theta), T_i) - lambda * ||theta_pen||_a^a / a,

where the intercept is never penalized. The KKT conditions bound the weighted
imbalance of every column by lambda * |theta_k|^(a-1), with equality for nonzero
coefficients when a = 2.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DomainError, NumericalError
from cbsr.core.types import FloatArray, IntArray
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.fitting.glm import (
    DivergenceCheck,
    PropensityFit,
    ScoreProblem,
    check_inputs,
    check_rule,
    fit_mle_score,
)
from cbsr.fitting.newton import NewtonStatus, maximize, newton_direction
from cbsr.models.feature_map import DesignMatrix, as_design
from cbsr.scoring.link import link_inv
from cbsr.scoring.rules import ScoringRule, weight

logger = logging.getLogger(__name__)

_PROX_SCREEN_TOL = 1e-6
_PROX_ROUNDS = 8
_KKT_FLOOR = 1e-9


@dataclass(frozen=True, eq=False, kw_only=True)
class RegularizedFit(PropensityFit):
    """Penalized fit with the quantities needed for its bias bound."""

    norm: PenaltyNorm
    penalized: FloatArray
    imbalance: FloatArray
    weight_sums: tuple[float, float]
    intercept: bool

    @property
    def n(self) -> int:
        """Number of units."""
        return int(self.fitted_f.shape[0])

    def kkt_residual(self) -> float:
        """Largest violation of the stationarity / subgradient conditions.

        Returns:
            Sup-norm of the KKT residual on the (1/n) imbalance scale
        """
        g = self.imbalance
        pen = self.penalized.astype(bool)
        lam = self.lambda_
        if self.norm is PenaltyNorm.L2:
            return float(np.max(np.abs(g - lam * pen * self.theta)))
        res = np.abs(g).copy()
        nonzero = pen & (self.theta != 0)
        res[nonzero] = np.abs(g[nonzero] - lam * np.sign(self.theta[nonzero]))
        zero = pen & (self.theta == 0)
        res[zero] = np.maximum(np.abs(g[zero]) - lam, 0.0)
        return float(np.max(res))


@dataclass(frozen=True, eq=False)
class ImbalanceBound:
    """Measured imbalance against the dual-constraint bound."""

    imbalance: FloatArray
    bound: FloatArray
    aggregate: float
    normalized_max_bias: float | None

    def satisfied(self, atol: float = 1e-8) -> bool:
        """Whether every |imbalance_k| is within its bound."""
        return bool(np.all(np.abs(self.imbalance) <= self.bound + atol))


def _penalty_mask(dm: DesignMatrix) -> FloatArray:
    mask = np.ones(dm.m)
    if dm.intercept:
        mask[0] = 0.0
    return mask


def _soft_threshold(z: FloatArray, thresh: FloatArray) -> FloatArray:
    return np.asarray(np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0), dtype=np.float64)


def _l1_violation(theta: FloatArray, g: FloatArray, lam: float, pen: FloatArray) -> FloatArray:
    res = np.abs(g).copy()
    on = (pen > 0) & (theta != 0)
    res[on] = np.abs(g[on] - lam * np.sign(theta[on]))
    off = (pen > 0) & (theta == 0)
    res[off] = np.maximum(np.abs(g[off]) - lam, 0.0)
    return res


def _fit_l2(
    problem: ScoreProblem,
    lam: float,
    pen: FloatArray,
    start: FloatArray,
    scales: FloatArray,
    settings: SolverSettings,
) -> tuple[FloatArray, float, int, bool]:
    result = maximize(
        objective=lambda th: problem.value(th) - 0.5 * lam * float(np.sum(pen * th**2)),
        gradient=lambda th: problem.gradient(th) - lam * pen * th,
        direction=lambda th, g: newton_direction(
            problem.hessian(th) - lam * np.diag(pen), g, settings
        ),
        x0=start,
        settings=settings,
        scales=scales,
    )
    return result.x, result.grad_norm, result.iterations, result.converged


def _prox_gradient(
    problem: ScoreProblem,
    lam: float,
    pen: FloatArray,
    theta: FloatArray,
    scales: FloatArray,
    settings: SolverSettings,
    max_iter: int,
) -> tuple[FloatArray, int, NewtonStatus]:
    def penalized_value(th: FloatArray) -> float:
        return problem.value(th) - lam * float(np.sum(pen * np.abs(th)))

    curvature = float(np.linalg.norm(problem.hessian(theta), 2))
    step = 1.0 / max(curvature, 1e-12)
    value = problem.value(theta)
    grad = problem.gradient(theta)
    iterations = 0
    status = NewtonStatus.MAX_ITER
    for iterations in range(1, max_iter + 1):
        if np.max(_l1_violation(theta, grad, lam, pen) / scales) <= _PROX_SCREEN_TOL:
            status = NewtonStatus.CONVERGED
            break
        for _ in range(settings.max_halvings):
            candidate = _soft_threshold(theta + step * grad, step * lam * pen)
            delta = candidate - theta
            value_new = problem.value(candidate)
            if value_new >= value + grad @ delta - float(delta @ delta) / (2.0 * step):
                break
            step *= 0.5
        else:
            logger.debug("prox step stalled at iter %d", iterations)
            status = NewtonStatus.STALLED
            break
        theta, value = candidate, value_new
        grad = problem.gradient(theta)
        step *= 1.5
        if iterations % 500 == 0:
            logger.debug("prox iter %d: value=%.12g", iterations, penalized_value(theta))
    return theta, iterations, status


def _polish_l1(
    problem: ScoreProblem,
    lam: float,
    pen: FloatArray,
    theta: FloatArray,
    scales: FloatArray,
    settings: SolverSettings,
) -> tuple[FloatArray, int]:
    active = np.flatnonzero((pen == 0) | (theta != 0))
    sign = np.sign(theta[active]) * pen[active]

    def embed(sub: FloatArray) -> FloatArray:
        full = np.zeros_like(theta)
        full[active] = sub
        return full

    result = maximize(
        objective=lambda s: problem.value(embed(s)) - lam * float(sign @ s),
        gradient=lambda s: problem.gradient(embed(s))[active] - lam * sign,
        direction=lambda s, g: newton_direction(
            problem.hessian(embed(s))[np.ix_(active, active)], g, settings
        ),
        x0=theta[active],
        settings=settings,
        scales=scales[active],
    )
    return embed(result.x), result.iterations


def _fit_l1(
    problem: ScoreProblem,
    lam: float,
    pen: FloatArray,
    start: FloatArray,
    scales: FloatArray,
    settings: SolverSettings,
) -> tuple[FloatArray, float, int, bool]:
    theta = start.copy()
    total = 0
    iter_cap = settings.prox_max_iter
    for _ in range(_PROX_ROUNDS):
        theta, used, status = _prox_gradient(problem, lam, pen, theta, scales, settings, iter_cap)
        if status is NewtonStatus.STALLED:
            logger.debug("proximal gradient stalled at lambda=%.4g", lam)
        total += used
        polished, used = _polish_l1(problem, lam, pen, theta, scales, settings)
        total += used
        # The polish assumes a fixed support and fixed signs; keep it only if it holds.
        same_signs = np.all(np.sign(polished) * pen == np.sign(theta) * pen)
        violation = _l1_violation(polished, problem.gradient(polished), lam, pen) / scales
        if same_signs and np.max(violation) <= max(settings.tol_grad, _KKT_FLOOR):
            return polished, float(np.max(violation)), total, True
        iter_cap = max(iter_cap // 2, 100)
    violation = _l1_violation(theta, problem.gradient(theta), lam, pen) / scales
    return theta, float(np.max(violation)), total, False


def fit_penalized(
    design: DesignMatrix | FloatArray,
    t: ArrayLike,
    rule: ScoringRule,
    lam: float,
    norm: PenaltyNorm | str = PenaltyNorm.L2,
    settings: SolverSettings | None = None,
    theta0: FloatArray | None = None,
) -> RegularizedFit:
    """Fit a penalized GLM propensity model.

    Args:
        design: Design matrix; an intercept in column 0 is left unpenalized
        t: Treatment indicators
        rule: Concave scoring rule
        lam: Penalty level lambda >= 0
        norm: ``l1`` (proximal gradient) or ``l2`` (damped Newton)
        settings: Solver settings
        theta0: Warm start

    Returns:
        The fitted model

    Raises:
        DomainError: If lambda is negative
        Separated: Only when lambda = 0 and exact balance is infeasible
    """
    settings = resolve(settings)
    norm = PenaltyNorm(norm)
    if not lam >= 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    check_rule(rule)
    dm = as_design(design)
    t_arr = check_inputs(dm, t)
    pen = _penalty_mask(dm)
    problem = ScoreProblem(dm.values, t_arr, rule)
    scales = dm.scales()
    start = np.zeros(dm.m) if theta0 is None else np.asarray(theta0, dtype=np.float64)

    if lam == 0.0:
        base = fit_mle_score(dm, t_arr, rule, settings=settings, theta0=start)
        theta, grad_norm, iterations, converged = (
            base.theta,
            base.grad_norm,
            base.iterations,
            base.converged,
        )
    elif norm is PenaltyNorm.L2:
        theta, grad_norm, iterations, converged = _fit_l2(
            problem, lam, pen, start, scales, settings
        )
    else:
        theta, grad_norm, iterations, converged = _fit_l1(
            problem, lam, pen, start, scales, settings
        )

    if not converged:
        logger.warning(
            "%s fit at lambda=%.4g stopped with KKT residual %.3g", norm.value, lam, grad_norm
        )
    if DivergenceCheck(dm.values, settings.separation_bound)(theta):
        logger.warning("penalized fit at lambda=%.4g is close to separation", lam)

    f = dm.values @ theta
    p = link_inv(f)
    fit = RegularizedFit(
        theta=theta,
        fitted_f=f,
        fitted_p=p,
        rule=rule,
        converged=converged,
        grad_norm=grad_norm,
        iterations=iterations,
        objective=problem.value(theta) - lam * _penalty(theta, pen, norm),
        columns=dm.columns,
        lambda_=lam,
        norm=norm,
        penalized=pen,
        imbalance=problem.gradient(theta),
        weight_sums=_weight_sums(rule, p, t_arr),
        intercept=dm.intercept,
    )
    return fit


def _penalty(theta: FloatArray, pen: FloatArray, norm: PenaltyNorm) -> float:
    if norm is PenaltyNorm.L1:
        return float(np.sum(pen * np.abs(theta)))
    return 0.5 * float(np.sum(pen * theta**2))


def _weight_sums(rule: ScoringRule, p: FloatArray, t: IntArray) -> tuple[float, float]:
    w = weight(rule, p, t)
    return float(w[t == 0].sum()), float(w[t == 1].sum())


def max_bias_factor(lam: float, theta: FloatArray, pen: FloatArray, norm: PenaltyNorm) -> float:
    """Worst-case imbalance lambda * ||theta_pen||_a^(a-1) over unit-norm outcomes.

    Args:
        lam: Penalty level
        theta: Coefficients
        pen: Penalty mask
        norm: Penalty norm

    Returns:
        The bound on the (1/n) imbalance scale
    """
    if lam == 0.0:
        return 0.0
    if norm is PenaltyNorm.L1:
        return lam
    return lam * float(np.linalg.norm(theta[pen > 0]))


def imbalance_bound(fit: RegularizedFit) -> ImbalanceBound:
    """Compare the fit's weighted imbalance with its dual-constraint bound.

    Imbalances are on the scale (1/n) sum_i (2T_i - 1) w_i phi_k(X_i). The normalized
    max bias converts the aggregate to the group-normalized estimator, valid when the
    unpenalized intercept equalizes both groups' weight sums.

    Args:
        fit: Penalized fit

    Returns:
        Per-coordinate imbalance and bound, the aggregate max bias and its
        normalized-estimator version
    """
    pen = fit.penalized
    a = fit.norm.exponent
    if a == 1:
        bound = fit.lambda_ * pen
    else:
        bound = fit.lambda_ * pen * np.abs(fit.theta)
    aggregate = max_bias_factor(fit.lambda_, fit.theta, pen, fit.norm)
    normalized = None
    if fit.intercept:
        s = fit.weight_sums[1]
        normalized = aggregate * fit.n / s
    return ImbalanceBound(
        imbalance=fit.imbalance,
        bound=np.asarray(bound, dtype=np.float64),
        aggregate=aggregate,
        normalized_max_bias=normalized,
    )


@dataclass(frozen=True, eq=False)
class PathPoint:
    """One lambda on a regularization path."""

    lambda_: float
    fit: RegularizedFit
    max_bias: float
    cv: float


def lambda_path(
    design: DesignMatrix | FloatArray,
    t: ArrayLike,
    rule: ScoringRule,
    grid: Sequence[float],
    norm: PenaltyNorm | str = PenaltyNorm.L2,
    settings: SolverSettings | None = None,
    warm_start: bool = True,
) -> list[PathPoint]:
    """Fit a sequence of penalty levels, largest first with warm starts.

    Args:
        design: Design matrix
        t: Treatment indicators
        rule: Concave scoring rule
        grid: Penalty levels, sorted ascending
        norm: Penalty norm
        settings: Solver settings
        warm_start: Start each fit from the previous (larger lambda) solution

    Returns:
        Path points in ascending lambda order

    Raises:
        DomainError: If the grid is empty or not sorted ascending
    """
    lams = [float(v) for v in grid]
    if not lams or any(b < a for a, b in zip(lams, lams[1:], strict=False)):
        raise DomainError("lambda grid must be non-empty and sorted ascending")
    norm = PenaltyNorm(norm)
    dm = as_design(design)
    t_arr = np.asarray(t)

    points: list[PathPoint] = []
    theta: FloatArray | None = None
    for lam in reversed(lams):
        fit = fit_penalized(
            dm, t_arr, rule, lam, norm, settings=settings, theta0=theta if warm_start else None
        )
        theta = fit.theta
        points.append(
            PathPoint(
                lambda_=lam,
                fit=fit,
                max_bias=imbalance_bound(fit).aggregate,
                cv=fit.weight_set(t_arr, fitter=norm.value).cv(),
            )
        )
    points.reverse()

    if norm is PenaltyNorm.L2:
        bias = np.array([pt.max_bias for pt in points])
        if np.any(np.diff(bias) < -1e-10):
            logger.warning("max bias is not monotone along the lambda path")
    return points


def _cv_or_inf[FitT](
    fit_at: Callable[[float, FitT | None], FitT],
    cv_of: Callable[[FitT], float],
    lam: float,
    warm: FitT | None,
) -> tuple[FitT | None, float]:
    # Small penalties approach separation; a failed fit counts as too dispersed.
    try:
        fit = fit_at(lam, warm)
        return fit, cv_of(fit)
    except (NumericalError, DomainError) as e:
        logger.debug("fit at lambda=%.4g failed during CV search: %s", lam, e)
        return None, float("inf")


@dataclass(frozen=True, eq=False)
class CvSearch[FitT]:
    """Result of the dispersion-targeted penalty search."""

    fit: FitT
    lambda_: float
    cv: float
    iterations: int
    method: str = "bisection on log lambda"


def bisect_lambda[FitT](
    fit_at: Callable[[float, FitT | None], FitT],
    cv_of: Callable[[FitT], float],
    target_cv: float,
    lam_lo: float = 1e-6,
    lam_hi: float = 1e3,
    max_iter: int = 40,
    tol: float = 0.01,
) -> CvSearch[FitT]:
    """Find the smallest penalty whose weights have CV at most ``target_cv``.

    Larger penalties give more uniform weights, so CV decreases in lambda. The
    search bisects log lambda until the CV is within ``tol`` below the target.

    Args:
        fit_at: Fits at a penalty level, given a warm-start fit or None
        cv_of: Weight coefficient of variation of a fit
        target_cv: Target dispersion
        lam_lo: Lower end of the bracket
        lam_hi: Upper end of the bracket
        max_iter: Maximum bisection steps
        tol: Accepted distance below the target

    Returns:
        The selected fit and its penalty level
    """
    if not target_cv > 0:
        raise DomainError("target CV must be positive")
    hi_fit = fit_at(lam_hi, None)
    hi_cv = cv_of(hi_fit)
    if hi_cv > target_cv:
        logger.warning(
            "CV %.3f at lambda=%.3g already exceeds target %.3f", hi_cv, lam_hi, target_cv
        )
        return CvSearch(fit=hi_fit, lambda_=lam_hi, cv=hi_cv, iterations=0)
    lo_fit, lo_cv = _cv_or_inf(fit_at, cv_of, lam_lo, hi_fit)
    if lo_fit is not None and lo_cv <= target_cv:
        return CvSearch(fit=lo_fit, lambda_=lam_lo, cv=lo_cv, iterations=0)

    lo, hi = np.log(lam_lo), np.log(lam_hi)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        mid_fit, mid_cv = _cv_or_inf(fit_at, cv_of, float(np.exp(mid)), hi_fit)
        if mid_fit is not None and mid_cv <= target_cv:
            hi, hi_fit, hi_cv = mid, mid_fit, mid_cv
            if target_cv - mid_cv <= tol:
                break
        else:
            lo = mid
    return CvSearch(fit=hi_fit, lambda_=float(np.exp(hi)), cv=hi_cv, iterations=iterations)


def fit_until_cv(
    design: DesignMatrix | FloatArray,
    t: ArrayLike,
    rule: ScoringRule,
    target_cv: float,
    norm: PenaltyNorm | str = PenaltyNorm.L2,
    settings: SolverSettings | None = None,
    lam_lo: float = 1e-6,
    lam_hi: float = 1e3,
) -> CvSearch[RegularizedFit]:
    """Penalized fit whose weights have coefficient of variation just below a target.

    Args:
        design: Design matrix
        t: Treatment indicators
        rule: Concave scoring rule
        target_cv: Target CV of the weights
        norm: Penalty norm
        settings: Solver settings
        lam_lo: Lower end of the search bracket
        lam_hi: Upper end of the search bracket

    Returns:
        The selected fit
    """
    dm = as_design(design)
    t_arr = np.asarray(t)
    norm = PenaltyNorm(norm)

    def fit_at(lam: float, warm: RegularizedFit | None) -> RegularizedFit:
        theta0 = None if warm is None else warm.theta
        return fit_penalized(dm, t_arr, rule, lam, norm, settings=settings, theta0=theta0)

    return bisect_lambda(
        fit_at,
        lambda fit: fit.weight_set(t_arr, fitter=norm.value).cv(),
        target_cv,
        lam_lo=lam_lo,
        lam_hi=lam_hi,
    )
