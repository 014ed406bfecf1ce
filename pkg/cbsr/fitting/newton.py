"""Damped Newton maximization of smooth concave objectives."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from cbsr.core.config import SolverSettings
from cbsr.core.errors import SingularHessian
from cbsr.core.types import FloatArray

logger = logging.getLogger(__name__)

_MAX_JITTER = 1e-2


class NewtonStatus(str, Enum):
    """Why the Newton loop stopped."""

    CONVERGED = "converged"
    STALLED = "stalled"
    MAX_ITER = "max_iter"
    DIVERGED = "diverged"


@dataclass(frozen=True, eq=False)
class NewtonResult:
    """Outcome of a Newton run."""

    x: FloatArray
    value: float
    grad: FloatArray
    grad_norm: float
    iterations: int
    status: NewtonStatus

    @property
    def converged(self) -> bool:
        """Whether the gradient tolerance was met."""
        return self.status is NewtonStatus.CONVERGED


def newton_direction(hess: FloatArray, grad: FloatArray, settings: SolverSettings) -> FloatArray:
    """Solve (-H) d = g for a negative (semi)definite Hessian.

    A ridge starting at ``hessian_jitter`` times the mean absolute diagonal is added
    whenever the Cholesky factorization fails, and grown tenfold until it succeeds.

    Args:
        hess: Hessian of the objective being maximized
        grad: Gradient at the same point
        settings: Solver settings

    Returns:
        The ascent direction

    Raises:
        SingularHessian: If no admissible ridge makes -H positive definite
    """
    neg = -np.asarray(hess, dtype=np.float64)
    scale = max(float(np.mean(np.abs(np.diag(neg)))), np.finfo(float).tiny)
    jitter = 0.0
    while True:
        try:
            factor = cho_factor(neg + jitter * np.eye(neg.shape[0]), check_finite=True)
            return np.asarray(cho_solve(factor, grad), dtype=np.float64)
        except (LinAlgError, ValueError):
            jitter = settings.hessian_jitter * scale if jitter == 0.0 else jitter * 10.0
            if jitter > _MAX_JITTER * scale:
                raise SingularHessian(
                    "Hessian is rank deficient beyond the jitter tolerance; "
                    "remove collinear features or regularize"
                ) from None
            logger.debug("Cholesky failed, retrying with jitter %.3g", jitter)


def maximize(
    objective: Callable[[FloatArray], float],
    gradient: Callable[[FloatArray], FloatArray],
    direction: Callable[[FloatArray, FloatArray], FloatArray],
    x0: FloatArray,
    settings: SolverSettings,
    scales: FloatArray | None = None,
    diverged: Callable[[FloatArray], bool] | None = None,
) -> NewtonResult:
    """Maximize a concave function by Newton steps with Armijo backtracking.

    Args:
        objective: Function to maximize
        gradient: Its gradient
        direction: Maps (x, gradient) to an ascent direction, usually -H^{-1} g
        x0: Starting point
        settings: Solver settings
        scales: Per-coordinate scale for the relative gradient tolerance
        diverged: Predicate flagging iterates that run off to infinity

    Returns:
        The final iterate with its status
    """
    x = np.array(x0, dtype=np.float64)
    scales = np.ones_like(x) if scales is None else np.asarray(scales, dtype=np.float64)
    value = objective(x)
    grad = gradient(x)
    status = NewtonStatus.MAX_ITER
    iterations = 0

    for iterations in range(1, settings.max_iter + 1):
        grad_norm = float(np.max(np.abs(grad) / scales, initial=0.0))
        if grad_norm <= settings.tol_grad:
            status = NewtonStatus.CONVERGED
            iterations -= 1
            break

        step = direction(x, grad)
        slope = float(grad @ step)
        if not slope > 0.0:
            status = NewtonStatus.STALLED
            break

        s = 1.0
        accepted = False
        for _ in range(settings.max_halvings):
            x_new = x + s * step
            value_new = objective(x_new)
            if np.isfinite(value_new) and value_new >= value + settings.armijo * s * slope:
                accepted = True
                break
            s *= 0.5

        if not accepted:
            # At the rounding floor the objective stops resolving progress; accept the
            # full step when it still shrinks the gradient.
            x_new = x + step
            grad_new = gradient(x_new)
            value_new = objective(x_new)
            flat = abs(value_new - value) <= 1e-13 * (1.0 + abs(value))
            if not (flat and np.max(np.abs(grad_new) / scales) < grad_norm):
                status = NewtonStatus.STALLED
                break
        else:
            grad_new = gradient(x_new)

        x, value, grad = x_new, value_new, grad_new
        logger.debug(
            "newton iter %d: value=%.12g |g|=%.3g step=%.3g", iterations, value, grad_norm, s
        )

        if diverged is not None and diverged(x):
            status = NewtonStatus.DIVERGED
            break
    else:
        grad_norm = float(np.max(np.abs(grad) / scales, initial=0.0))
        if grad_norm <= settings.tol_grad:
            status = NewtonStatus.CONVERGED

    grad_norm = float(np.max(np.abs(grad) / scales, initial=0.0))
    if status is NewtonStatus.STALLED and grad_norm <= settings.tol_grad:
        status = NewtonStatus.CONVERGED
    return NewtonResult(
        x=x,
        value=float(value),
        grad=grad,
        grad_norm=grad_norm,
        iterations=iterations,
        status=status,
    )
