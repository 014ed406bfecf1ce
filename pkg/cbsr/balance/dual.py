"""Dual problems of the ATT and ATE fits, solved in their multiplier space.

ATT (entropy balancing): minimize sum_{T=0} w log w - w subject to
sum_{T=0} w phi = sum_{T=1} phi; the solution is w = exp(phi' eta) where eta minimizes
sum_{T=0} exp(phi' eta) - eta' sum_{T=1} phi.

ATE: minimize sum_i (w_i - 1) log(w_i - 1) - w_i subject to
sum_{T=1} w phi = sum_{T=0} w phi; with a_i = (2T_i - 1) phi_i the solution is
w = 1 + exp(a' eta) where eta minimizes sum_i exp(a_i' eta) + a_i' eta.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import xlogy

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DomainError, Infeasible
from cbsr.core.types import FloatArray
from cbsr.enums.estimand import Estimand
from cbsr.fitting.glm import DivergenceCheck, check_inputs
from cbsr.fitting.newton import NewtonResult, NewtonStatus, maximize, newton_direction
from cbsr.models.feature_map import DesignMatrix, as_design
from cbsr.models.weights import Provenance, WeightSet
from cbsr.scoring.rules import ScoringRule

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Weights from a dual solver with their certificate."""

    weights: WeightSet
    eta: FloatArray
    primal: float
    dual: float
    constraint_violation: float
    iterations: int
    converged: bool

    @property
    def gap(self) -> float:
        """Primal minus dual objective, zero at the optimum."""
        return self.primal - self.dual


def _minimize(
    loss: Callable[[FloatArray], float],
    grad: Callable[[FloatArray], FloatArray],
    hess: Callable[[FloatArray], FloatArray],
    dm: DesignMatrix,
    settings: SolverSettings,
    label: str,
) -> NewtonResult:
    result = maximize(
        objective=lambda eta: -loss(eta),
        gradient=lambda eta: -grad(eta),
        direction=lambda eta, g: newton_direction(-hess(eta), g, settings),
        x0=np.zeros(dm.m),
        settings=settings,
        scales=dm.scales(),
        diverged=DivergenceCheck(dm.values, settings.separation_bound),
    )
    if result.status in (NewtonStatus.DIVERGED, NewtonStatus.MAX_ITER):
        raise Infeasible(
            f"{label} dual diverges after {result.iterations} iterations; "
            "exact balance is infeasible",
            iterations=result.iterations,
        )
    if not result.converged:
        logger.warning("%s dual stopped at |g|=%.3g", label, result.grad_norm)
    return result


def _prepare(design: DesignMatrix | FloatArray, t: ArrayLike) -> tuple[DesignMatrix, FloatArray]:
    dm = as_design(design)
    if not dm.intercept:
        raise DomainError("dual solvers require an intercept in column 0 of the design")
    t_arr = check_inputs(dm, t)
    return dm, t_arr.astype(np.float64)


def solve_dual_att(
    design: DesignMatrix | FloatArray, t: ArrayLike, settings: SolverSettings | None = None
) -> DualSolution:
    """Entropy balancing weights for the ATT.

    Args:
        design: Design matrix with an intercept in column 0
        t: Treatment indicators
        settings: Solver settings

    Returns:
        Treated weights 1 and control weights reweighting the controls to the
        treated column sums

    Raises:
        DomainError: If the design has no intercept
        Infeasible: If exact balance cannot be reached
    """
    settings = resolve(settings)
    dm, t_arr = _prepare(design, t)
    n = dm.values.shape[0]
    control = dm.values[t_arr == 0]
    target = dm.values[t_arr == 1].sum(axis=0)

    def loss(eta: FloatArray) -> float:
        return float((np.exp(control @ eta).sum() - eta @ target) / n)

    def grad(eta: FloatArray) -> FloatArray:
        return np.asarray((control.T @ np.exp(control @ eta) - target) / n)

    def hess(eta: FloatArray) -> FloatArray:
        w = np.exp(control @ eta)
        return np.asarray((control * w[:, np.newaxis]).T @ control / n)

    result = _minimize(loss, grad, hess, dm, settings, "ATT")
    eta = result.x
    w_control = np.exp(control @ eta)
    w = np.ones(n)
    w[t_arr == 0] = w_control
    primal = float(np.sum(xlogy(w_control, w_control) - w_control))
    dual = -n * loss(eta)
    violation = float(np.max(np.abs(control.T @ w_control - target)))
    return DualSolution(
        weights=WeightSet.from_raw(
            w,
            t_arr.astype(np.int64),
            Provenance(rule=ScoringRule.for_estimand(Estimand.ATT), fitter="dual-att"),
        ),
        eta=eta,
        primal=primal,
        dual=dual,
        constraint_violation=violation,
        iterations=result.iterations,
        converged=result.converged,
    )


def solve_dual_ate(
    design: DesignMatrix | FloatArray, t: ArrayLike, settings: SolverSettings | None = None
) -> DualSolution:
    """Balancing weights w >= 1 for the ATE.

    Args:
        design: Design matrix with an intercept in column 0
        t: Treatment indicators
        settings: Solver settings

    Returns:
        Weights equating the weighted column sums of both groups

    Raises:
        DomainError: If the design has no intercept
        Infeasible: If exact balance cannot be reached
    """
    settings = resolve(settings)
    dm, t_arr = _prepare(design, t)
    n = dm.values.shape[0]
    signed = dm.values * (2.0 * t_arr - 1.0)[:, np.newaxis]

    def loss(eta: FloatArray) -> float:
        c = signed @ eta
        return float(np.sum(np.exp(c) + c) / n)

    def grad(eta: FloatArray) -> FloatArray:
        return np.asarray(signed.T @ (1.0 + np.exp(signed @ eta)) / n)

    def hess(eta: FloatArray) -> FloatArray:
        e = np.exp(signed @ eta)
        return np.asarray((signed * e[:, np.newaxis]).T @ signed / n)

    result = _minimize(loss, grad, hess, dm, settings, "ATE")
    eta = result.x
    excess = np.exp(signed @ eta)
    w = 1.0 + excess
    primal = float(np.sum(xlogy(excess, excess) - w))
    dual = -n * loss(eta) - n
    violation = float(np.max(np.abs(signed.T @ w)))
    return DualSolution(
        weights=WeightSet.from_raw(
            w,
            t_arr.astype(np.int64),
            Provenance(rule=ScoringRule.for_estimand(Estimand.ATE), fitter="dual-ate"),
        ),
        eta=eta,
        primal=primal,
        dual=dual,
        constraint_violation=violation,
        iterations=result.iterations,
        converged=result.converged,
    )


def ate_primal_objective(w: ArrayLike) -> float:
    """Objective sum_i (w_i - 1) log(w_i - 1) - w_i of the ATE dual problem.

    Args:
        w: Weights, all at least 1

    Returns:
        The objective value
    """
    arr = np.asarray(w, dtype=np.float64)
    if np.any(arr < 1.0):
        raise DomainError("ATE balancing weights must be at least 1")
    return float(np.sum(xlogy(arr - 1.0, arr - 1.0) - arr))
