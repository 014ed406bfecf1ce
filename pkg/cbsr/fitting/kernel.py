"""Propensity models in a reproducing kernel Hilbert space.

The linear predictor is f = b + K gamma with an unpenalized intercept b, fitted by
maximizing

    (1/n) sum_i S(f_i, T_i) - (lambda / 2) gamma' K gamma.

Stationarity in gamma reads u / n = lambda * gamma with u the signed weights, so the
imbalance of any g in the unit ball of the RKHS is at most lambda * ||f||.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve
from sklearn.metrics.pairwise import (
    euclidean_distances,
    linear_kernel,
    polynomial_kernel,
    rbf_kernel,
)

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DataError, DomainError, IllConditionedGram
from cbsr.core.types import FloatArray, IntArray
from cbsr.enums.kernel_kind import KernelKind
from cbsr.fitting.glm import PropensityFit, check_rule
from cbsr.fitting.newton import maximize
from cbsr.fitting.regularized import CvSearch, bisect_lambda
from cbsr.models.dataset import Dataset
from cbsr.scoring.link import link_inv
from cbsr.scoring.rules import ScoringRule, score_grad, score_hess, score_objective, weight

logger = logging.getLogger(__name__)


class Kernel(BaseModel):
    """A positive definite kernel on covariate vectors."""

    model_config = ConfigDict(frozen=True)

    kind: KernelKind = Field(description="Kernel family", default=KernelKind.GAUSSIAN)
    sigma: float = Field(description="Inverse bandwidth of gaussian and laplace", default=1.0, gt=0)
    degree: int = Field(description="Degree of the polynomial kernel", default=2, ge=1)
    offset: float = Field(description="Offset of the polynomial kernel", default=0.5, ge=0)

    def __str__(self) -> str:
        """Short label, e.g. ``gaussian(sigma=1)``."""
        match self.kind:
            case KernelKind.GAUSSIAN | KernelKind.LAPLACE:
                return f"{self.kind.value}(sigma={self.sigma:g})"
            case KernelKind.POLYNOMIAL:
                return f"polynomial(degree={self.degree}, offset={self.offset:g})"
        return self.kind.value


def gram(kernel: Kernel, x: ArrayLike, y: ArrayLike | None = None) -> FloatArray:
    """Kernel matrix between the rows of x and y.

    Args:
        kernel: Kernel
        x: n x d matrix
        y: m x d matrix, x itself by default

    Returns:
        n x m matrix of kernel values
    """
    xa = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ya = xa if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64))
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise DataError("kernel inputs contain non-finite values")
    match kernel.kind:
        case KernelKind.GAUSSIAN:
            k = rbf_kernel(xa, ya, gamma=kernel.sigma)
        case KernelKind.LAPLACE:
            k = np.exp(-kernel.sigma * euclidean_distances(xa, ya))
        case KernelKind.POLYNOMIAL:
            k = polynomial_kernel(xa, ya, degree=kernel.degree, gamma=1.0, coef0=kernel.offset)
        case _:
            k = linear_kernel(xa, ya)
    if y is None:
        k = 0.5 * (k + k.T)
    return np.asarray(k, dtype=np.float64)


def jittered_gram(
    kernel: Kernel, x: ArrayLike, settings: SolverSettings | None = None
) -> FloatArray:
    """Gram matrix with ``kernel_jitter`` times its mean diagonal added to the diagonal."""
    settings = resolve(settings)
    k = gram(kernel, x)
    scale = float(np.mean(np.diag(k)))
    return k + settings.kernel_jitter * max(scale, 1e-300) * np.eye(k.shape[0])


def rkhs_norm(k: FloatArray, g: FloatArray) -> float:
    """RKHS norm sqrt(g' K^{-1} g) of the interpolant of g on the training points.

    Args:
        k: Positive definite (jittered) Gram matrix
        g: Function values

    Returns:
        The norm

    Raises:
        IllConditionedGram: If K cannot be factored
    """
    try:
        factor = cho_factor(k)
    except LinAlgError:
        raise IllConditionedGram("Gram matrix is not positive definite") from None
    return float(np.sqrt(max(float(g @ cho_solve(factor, g)), 0.0)))


@dataclass(frozen=True, eq=False, kw_only=True)
class KernelFit(PropensityFit):
    """RKHS propensity fit; ``theta`` holds the representer coefficients gamma."""

    b: float
    kernel: Kernel
    hnorm: float
    x_train: FloatArray
    gram: FloatArray
    weight_sums: tuple[float, float]

    @property
    def gamma(self) -> FloatArray:
        """Representer coefficients."""
        return self.theta

    def predict(self, x: ArrayLike) -> FloatArray:
        """Linear predictor at new covariate rows.

        Args:
            x: m x d matrix

        Returns:
            b + sum_i gamma_i K(x, X_i)
        """
        return np.asarray(self.b + gram(self.kernel, x, self.x_train) @ self.theta)


class KernelProblem:
    """Penalized average score over (gamma, b)."""

    def __init__(self, k: FloatArray, t: IntArray, rule: ScoringRule, lam: float) -> None:
        """Initialize the problem.

        Args:
            k: Jittered Gram matrix
            t: Treatment indicators
            rule: Concave scoring rule
            lam: Penalty level
        """
        self.k = k
        self.t = t
        self.rule = rule
        self.lam = lam
        self.n = k.shape[0]

    def predictor(self, z: FloatArray) -> FloatArray:
        """Linear predictor for stacked z = (gamma, b)."""
        return np.asarray(self.k @ z[:-1] + z[-1])

    def value(self, z: FloatArray) -> float:
        """Penalized objective."""
        gamma = z[:-1]
        mean = float(np.mean(score_objective(self.rule, self.predictor(z), self.t)))
        return mean - 0.5 * self.lam * float(gamma @ self.k @ gamma)

    def residual(self, z: FloatArray) -> FloatArray:
        """Reduced stationarity residual (u / n - lambda * gamma, sum(u) / n)."""
        u = score_grad(self.rule, self.predictor(z), self.t)
        return np.append(u / self.n - self.lam * z[:-1], u.sum() / self.n)

    def gradient(self, z: FloatArray) -> FloatArray:
        """Gradient with respect to (gamma, b)."""
        r = self.residual(z)
        return np.append(self.k @ r[:-1], r[-1])

    def direction(self, z: FloatArray, _: FloatArray) -> FloatArray:
        """Newton step from the reduced system, with K cancelled from the gamma rows.

        Raises:
            IllConditionedGram: If the reduced system is singular
        """
        h = score_hess(self.rule, self.predictor(z), self.t)
        n = self.n
        system = np.empty((n + 1, n + 1))
        system[:n, :n] = h[:, np.newaxis] * self.k / n - self.lam * np.eye(n)
        system[:n, n] = h / n
        system[n, :n] = h @ self.k / n
        system[n, n] = h.sum() / n
        try:
            step = solve(system, -self.residual(z), check_finite=True)
        except (LinAlgError, ValueError):
            raise IllConditionedGram(
                f"kernel Newton system is singular at lambda={self.lam:g}; use a larger lambda"
            ) from None
        if not np.all(np.isfinite(step)):
            raise IllConditionedGram(
                f"kernel Newton step is not finite at lambda={self.lam:g}; use a larger lambda"
            )
        return np.asarray(step, dtype=np.float64)


def _as_matrix(x: Dataset | ArrayLike) -> FloatArray:
    if isinstance(x, Dataset):
        return x.x
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, np.newaxis] if arr.ndim == 1 else arr


def fit_rkhs(
    x: Dataset | ArrayLike,
    t: ArrayLike,
    kernel: Kernel,
    rule: ScoringRule,
    lam: float,
    settings: SolverSettings | None = None,
    warm: KernelFit | None = None,
) -> KernelFit:
    """Fit an RKHS propensity model by damped Newton in (gamma, b).

    Args:
        x: Covariates (raw, no intercept column)
        t: Treatment indicators
        kernel: Kernel
        rule: Concave scoring rule
        lam: Penalty level, strictly positive
        settings: Solver settings
        warm: Previous fit on the same data to start from

    Returns:
        The fitted model

    Raises:
        DomainError: If lambda is not positive
        IllConditionedGram: If the Newton system cannot be solved
    """
    settings = resolve(settings)
    if not lam > 0:
        raise DomainError(f"RKHS fitting needs lambda > 0, got {lam}")
    check_rule(rule)
    xa = _as_matrix(x)
    t_arr = np.asarray(t)
    if t_arr.shape != (xa.shape[0],):
        raise DataError(f"treatment has shape {t_arr.shape}, covariates have {xa.shape[0]} rows")
    if t_arr.sum() == 0 or t_arr.sum() == t_arr.size:
        raise DataError("both treatment groups must be non-empty to fit a propensity model")
    t_arr = t_arr.astype(np.int64)

    k = jittered_gram(kernel, xa, settings)
    problem = KernelProblem(k, t_arr, rule, lam)
    n = xa.shape[0]
    z0 = np.zeros(n + 1) if warm is None else np.append(warm.theta, warm.b)
    result = maximize(
        objective=problem.value,
        gradient=problem.gradient,
        direction=problem.direction,
        x0=z0,
        settings=settings,
    )
    if not result.converged:
        logger.warning(
            "RKHS fit with %s at lambda=%.4g stopped at |g|=%.3g (%s)",
            kernel,
            lam,
            result.grad_norm,
            result.status.value,
        )

    gamma, b = result.x[:-1], float(result.x[-1])
    f = problem.predictor(result.x)
    p = link_inv(f)
    w = weight(rule, p, t_arr)
    hnorm = float(np.sqrt(max(float(gamma @ k @ gamma), 0.0)))
    return KernelFit(
        theta=gamma,
        fitted_f=f,
        fitted_p=p,
        rule=rule,
        converged=result.converged,
        grad_norm=result.grad_norm,
        iterations=result.iterations,
        objective=result.value,
        columns=(),
        lambda_=lam,
        b=b,
        kernel=kernel,
        hnorm=hnorm,
        x_train=xa,
        gram=k,
        weight_sums=(float(w[t_arr == 0].sum()), float(w[t_arr == 1].sum())),
    )


def rkhs_max_bias(fit: KernelFit, normalized: bool = False) -> float:
    """Worst-case imbalance over the unit ball of the RKHS.

    Args:
        fit: RKHS fit
        normalized: Convert to the group-normalized estimator scale (times n / s)

    Returns:
        lambda * ||f||, optionally times n / s
    """
    bound = fit.lambda_ * fit.hnorm
    if normalized:
        bound *= fit.fitted_f.shape[0] / fit.weight_sums[1]
    return bound


def att_dual_objective(w_control: ArrayLike, t: ArrayLike, k: FloatArray, lam: float) -> float:
    """Dual objective of the RKHS fit under the ATT rule.

    (1/n) sum_{T=0} (w log w - w - 1) + mu' K mu / (2 lambda), mu = (T - (1-T) w) / n.
    Its minimum over w > 0 with sum_{T=0} w = n1 equals the primal maximum.

    Args:
        w_control: Control weights in the order of the control units
        t: Treatment indicators
        k: The Gram matrix used by the fit
        lam: Penalty level

    Returns:
        The dual objective
    """
    t_arr = np.asarray(t)
    w = np.asarray(w_control, dtype=np.float64)
    n = t_arr.shape[0]
    full = np.zeros(n)
    full[t_arr == 0] = w
    mu = (t_arr - (1 - t_arr) * full) / n
    entropy = float(np.sum(w * np.log(w) - w - 1.0)) / n
    return entropy + float(mu @ k @ mu) / (2.0 * lam)


def fit_rkhs_until_cv(
    x: Dataset | ArrayLike,
    t: ArrayLike,
    kernel: Kernel,
    rule: ScoringRule,
    target_cv: float,
    settings: SolverSettings | None = None,
    lam_lo: float = 1e-6,
    lam_hi: float = 1e3,
) -> CvSearch[KernelFit]:
    """RKHS fit whose weights have coefficient of variation just below a target.

    Args:
        x: Covariates
        t: Treatment indicators
        kernel: Kernel
        rule: Concave scoring rule
        target_cv: Target CV of the weights
        settings: Solver settings
        lam_lo: Lower end of the search bracket
        lam_hi: Upper end of the search bracket

    Returns:
        The selected fit
    """
    t_arr = np.asarray(t)
    return bisect_lambda(
        lambda lam, warm: fit_rkhs(x, t_arr, kernel, rule, lam, settings=settings, warm=warm),
        lambda fit: fit.weight_set(t_arr, fitter="rkhs").cv(),
        target_cv,
        lam_lo=lam_lo,
        lam_hi=lam_hi,
    )
