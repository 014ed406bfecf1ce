"""Data generating processes for the simulation studies.

All three designs satisfy the sharp null Y(0) = Y(1), so the true effect of every
weighted estimand is zero.
"""

import logging
from dataclasses import dataclass
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, cholesky
from scipy.special import expit

from cbsr.core.errors import IllConditionedGram
from cbsr.core.types import FloatArray
from cbsr.enums.design import SimDesign
from cbsr.enums.kernel_kind import KernelKind
from cbsr.fitting.kernel import Kernel, gram
from cbsr.models.dataset import Dataset
from cbsr.models.feature_map import INTERCEPT, DesignMatrix
from cbsr.simulate.rng import bernoulli, normal, stream

logger = logging.getLogger(__name__)

_GP_JITTER = 1e-8
_GP_RETRY_JITTER = 1e-4
_AR_COEF = 0.5


class SimSpec(BaseModel):
    """One simulation cell."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    design: SimDesign = Field(description="Data generating process")
    n: int = Field(description="Sample size", default=1000, ge=10)
    d: int = Field(description="Number of covariates (gp_lowdim and highdim)", default=5, ge=1)
    kernel_f: Kernel = Field(
        description="Covariance of the logit propensity draw (gp_lowdim)",
        default=Kernel(kind=KernelKind.POLYNOMIAL, degree=1),
    )
    kernel_g: Kernel = Field(
        description="Covariance of the outcome function draw (gp_lowdim)",
        default=Kernel(kind=KernelKind.LAPLACE, sigma=0.1),
    )
    g_scale: float = Field(description="Multiplier of the outcome function draw", default=1.0, ge=0)
    rho: float = Field(description="Propensity signal strength (highdim)", default=1.0, ge=0)
    s_t: int = Field(description="Nonzero propensity coefficients (highdim)", default=5, ge=1)
    s_y: int = Field(description="Nonzero outcome coefficients (highdim)", default=5, ge=1)
    sigma: float = Field(description="Outcome noise SD", default=1.0, ge=0)

    @model_validator(mode="after")
    def validate_design_parameters(self) -> Self:
        """Validate sparsity levels against the dimension.

        Returns:
            The validated model instance

        Raises:
            ValueError: If s_t or s_y exceeds d
        """
        if self.design is SimDesign.HIGHDIM and max(self.s_t, self.s_y) > self.d:
            raise ValueError(f"s_t={self.s_t} and s_y={self.s_y} must not exceed d={self.d}")

        return self

    @classmethod
    def kang_schafer(cls, n: int = 200) -> Self:
        """The Kang-Schafer cell."""
        return cls(design=SimDesign.KANG_SCHAFER, n=n, d=4)

    @classmethod
    def highdim(
        cls, rho: float, s_t: int, s_y: int, n: int = 1000, d: int = 100, sigma: float = 5.0
    ) -> Self:
        """A high-dimensional linear cell."""
        return cls(design=SimDesign.HIGHDIM, n=n, d=d, rho=rho, s_t=s_t, s_y=s_y, sigma=sigma)

    @property
    def label(self) -> str:
        """Short description of the cell."""
        match self.design:
            case SimDesign.KANG_SCHAFER:
                return f"kang_schafer(n={self.n})"
            case SimDesign.GP_LOWDIM:
                return f"gp_lowdim(n={self.n}, f={self.kernel_f}, g={self.kernel_g})"
        return f"highdim(n={self.n}, d={self.d}, rho={self.rho:g}, s_t={self.s_t}, s_y={self.s_y})"


@dataclass(frozen=True, eq=False)
class SimulatedData:
    """A simulated dataset with the quantities an oracle would know."""

    dataset: Dataset
    p: FloatArray
    f: FloatArray
    g0: FloatArray
    sigma: float
    z: FloatArray | None = None
    theta: FloatArray | None = None
    beta: FloatArray | None = None
    tau: float = 0.0


def kang_schafer_transform(z: FloatArray) -> FloatArray:
    """Observed covariates as nonlinear transformations of the latent Gaussians.

    Args:
        z: n x 4 latent matrix

    Returns:
        n x 4 matrix (exp(z1/2), z2/(1+exp(z1))+10, (z1 z3/25+0.6)^3, (z2+z4+20)^2)
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return np.column_stack(
        [
            np.exp(z[:, 0] / 2.0),
            z[:, 1] / (1.0 + np.exp(z[:, 0])) + 10.0,
            (z[:, 0] * z[:, 2] / 25.0 + 0.6) ** 3,
            (z[:, 1] + z[:, 3] + 20.0) ** 2,
        ]
    )


def kang_schafer_logit(z: FloatArray) -> FloatArray:
    """True logit of the propensity score, -z1 + 0.5 z2 - 0.25 z3 - 0.1 z4."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return np.asarray(z @ np.array([-1.0, 0.5, -0.25, -0.1]), dtype=np.float64)


def gen_kang_schafer(n: int, seed: int, replicate: int | None = None) -> SimulatedData:
    """Kang-Schafer data: observed covariates are transforms of latent Gaussians.

    Args:
        n: Sample size, at least 10
        seed: Run seed
        replicate: Replicate index

    Returns:
        The data, with Z, the true scores and the outcome mean retained
    """
    spec = SimSpec.kang_schafer(n)
    rng = stream(seed, replicate)
    z = normal(rng, (spec.n, 4))
    f = kang_schafer_logit(z)
    p = expit(f)
    t = bernoulli(rng, p)
    g0 = 210.0 + 27.4 * z[:, 0] + 13.7 * (z[:, 1] + z[:, 2] + z[:, 3])
    y = g0 + normal(rng, spec.n)
    ds = Dataset(x=kang_schafer_transform(z), t=t, y=y, columns=("x1", "x2", "x3", "x4"))
    return SimulatedData(dataset=ds, p=p, f=f, g0=g0, sigma=1.0, z=z)


def kang_schafer_candidates(ds: Dataset, intercept: bool = False) -> DesignMatrix:
    """Standardized candidate columns {x1..x4, x1^2..x4^2} for stepwise selection.

    Args:
        ds: Kang-Schafer dataset (or any dataset; every covariate and its square)
        intercept: Prepend a constant column

    Returns:
        Design with columns standardized using ddof=1
    """
    body = np.column_stack([ds.x, ds.x**2])
    body = (body - body.mean(axis=0)) / body.std(axis=0, ddof=1)
    names: tuple[str, ...] = (*ds.columns, *(f"{c}^2" for c in ds.columns))
    if intercept:
        body = np.column_stack([np.ones(ds.n), body])
        names = (INTERCEPT, *names)
    return DesignMatrix(values=np.ascontiguousarray(body), columns=names, intercept=intercept)


def gp_draw(k: FloatArray, rng: np.random.Generator) -> FloatArray:
    """Draw N(0, K) at the sample points through a jittered Cholesky factor.

    Args:
        k: Covariance (Gram) matrix
        rng: Generator

    Returns:
        One draw

    Raises:
        IllConditionedGram: If K cannot be factored even with the larger jitter
    """
    z = normal(rng, k.shape[0])
    scale = max(float(np.mean(np.diag(k))), 1e-300)
    for jitter in (_GP_JITTER, _GP_RETRY_JITTER):
        try:
            factor = cholesky(k + jitter * scale * np.eye(k.shape[0]), lower=True)
        except LinAlgError:
            logger.debug("Cholesky failed at jitter %.0e", jitter)
            continue
        return np.asarray(factor @ z, dtype=np.float64)
    raise IllConditionedGram(f"Gram matrix cannot be factored with jitter {_GP_RETRY_JITTER:g}")


def gen_gp_lowdim(spec: SimSpec, seed: int, replicate: int | None = None) -> SimulatedData:
    """Low-dimensional design with Gaussian process propensity and outcome functions.

    X ~ N(0, I_d); logit p = f ~ GP(0, kernel_f); Y = g_scale * g0 + sigma * eps with
    g0 ~ GP(0, kernel_g), both drawn at the sample points.

    Args:
        spec: Cell with ``design=gp_lowdim``
        seed: Run seed
        replicate: Replicate index

    Returns:
        The data with the latent f and g0 values
    """
    rng = stream(seed, replicate)
    x = normal(rng, (spec.n, spec.d))
    f = gp_draw(gram(spec.kernel_f, x), rng)
    g0 = spec.g_scale * gp_draw(gram(spec.kernel_g, x), rng)
    p = expit(f)
    t = bernoulli(rng, p)
    y = g0 + spec.sigma * normal(rng, spec.n)
    return SimulatedData(dataset=Dataset(x=x, t=t, y=y), p=p, f=f, g0=g0, sigma=spec.sigma)


def ar1_covariates(rng: np.random.Generator, n: int, d: int) -> FloatArray:
    """Rows ~ N(0, Sigma) with Sigma_ij = 0.5^|i-j|, by the AR(1) recursion."""
    z = normal(rng, (n, d))
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    innovation = np.sqrt(1.0 - _AR_COEF**2)
    for j in range(1, d):
        x[:, j] = _AR_COEF * x[:, j - 1] + innovation * z[:, j]
    return x


def sparse_unit_vector(d: int, s: int) -> FloatArray:
    """First s entries 1/sqrt(s), the rest 0."""
    out = np.zeros(d)
    out[:s] = 1.0 / np.sqrt(s)
    return out


def gen_highdim(
    rho: float,
    s_t: int,
    s_y: int,
    n: int = 1000,
    d: int = 100,
    seed: int = 0,
    sigma: float = 5.0,
    replicate: int | None = None,
) -> SimulatedData:
    """High-dimensional linear design.

    Args:
        rho: Propensity signal strength; logit p = rho * x' theta
        s_t: Nonzero entries of theta
        s_y: Nonzero entries of beta; Y = x' beta + sigma * eps
        n: Sample size
        d: Dimension
        seed: Run seed
        sigma: Noise SD
        replicate: Replicate index

    Returns:
        The data with theta and beta
    """
    spec = SimSpec.highdim(rho, s_t, s_y, n=n, d=d, sigma=sigma)
    rng = stream(seed, replicate)
    x = ar1_covariates(rng, spec.n, spec.d)
    theta = sparse_unit_vector(spec.d, spec.s_t)
    beta = sparse_unit_vector(spec.d, spec.s_y)
    f = spec.rho * (x @ theta)
    p = expit(f)
    t = bernoulli(rng, p)
    g0 = x @ beta
    y = g0 + spec.sigma * normal(rng, spec.n)
    return SimulatedData(
        dataset=Dataset(x=x, t=t, y=y),
        p=p,
        f=f,
        g0=g0,
        sigma=spec.sigma,
        theta=theta,
        beta=beta,
    )


def generate(spec: SimSpec, seed: int, replicate: int | None = None) -> SimulatedData:
    """Draw one dataset of a cell.

    Args:
        spec: Cell
        seed: Run seed
        replicate: Replicate index

    Returns:
        The simulated data
    """
    match spec.design:
        case SimDesign.KANG_SCHAFER:
            return gen_kang_schafer(spec.n, seed, replicate)
        case SimDesign.GP_LOWDIM:
            return gen_gp_lowdim(spec, seed, replicate)
    return gen_highdim(
        spec.rho,
        spec.s_t,
        spec.s_y,
        n=spec.n,
        d=spec.d,
        seed=seed,
        sigma=spec.sigma,
        replicate=replicate,
    )
