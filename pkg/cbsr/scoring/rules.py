"""Beta family of covariate balancing scoring rules.

A rule (alpha, beta) has G''(p) = p^(alpha-1) (1-p)^(beta-1). Under the logistic
link the induced weighting function is

    w(x, 1) = p^alpha (1-p)^(beta+1),    w(x, 0) = p^(alpha+1) (1-p)^beta,

and the score is concave in the linear predictor f exactly when
-1 <= alpha, beta <= 0. All optimization runs on the f scale, where first and second
derivatives have closed forms for every rule.
"""

from functools import lru_cache
from typing import Self

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import quad

from cbsr.core.errors import DomainError
from cbsr.core.types import FloatArray
from cbsr.enums.estimand import Estimand
from cbsr.scoring.link import link, link_inv

_QUADRATURE_NODES = 64


class ScoringRule(BaseModel):
    """A member of the Beta family, identified by its exponents."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(description="Exponent of p", ge=-1.0, le=1.0)
    beta: float = Field(description="Exponent of 1 - p", ge=-1.0, le=1.0)

    @classmethod
    def for_estimand(cls, estimand: Estimand | str) -> Self:
        """Build the rule tailored to a named estimand.

        Args:
            estimand: ATE, ATC, ATT or OWATE

        Returns:
            The corresponding rule
        """
        alpha, beta = Estimand(estimand).alpha_beta
        return cls(alpha=alpha, beta=beta)

    @classmethod
    def parse(cls, text: str) -> Self:
        """Parse ``ate``, ``att``, ``atc``, ``owate`` or ``custom:a,b``.

        Args:
            text: Estimand label as used on the command line

        Returns:
            The parsed rule

        Raises:
            DomainError: If the label is not recognised
        """
        label = text.strip().lower()
        if label.startswith("custom:"):
            try:
                a, b = (float(v) for v in label.removeprefix("custom:").split(","))
            except ValueError:
                raise DomainError(f"Invalid custom rule [{text}], expected custom:a,b") from None
            if not (-1.0 <= a <= 1.0 and -1.0 <= b <= 1.0):
                raise DomainError(f"Custom rule [{text}] is outside [-1, 1]^2")
            return cls(alpha=a, beta=b)
        try:
            return cls.for_estimand(Estimand(label.upper()))
        except ValueError:
            raise DomainError(f"Unknown estimand [{text}]") from None

    @property
    def estimand(self) -> Estimand:
        """The named estimand of this rule, or CUSTOM."""
        for estimand in (Estimand.ATE, Estimand.ATC, Estimand.ATT, Estimand.OWATE):
            if estimand.alpha_beta == (self.alpha, self.beta):
                return estimand
        return Estimand.CUSTOM

    @property
    def is_concave(self) -> bool:
        """Whether both score branches are concave in f."""
        return -1.0 <= self.alpha <= 0.0 and -1.0 <= self.beta <= 0.0

    def reflected(self) -> "ScoringRule":
        """The rule with treatment labels swapped, (beta, alpha)."""
        return ScoringRule(alpha=self.beta, beta=self.alpha)

    def __str__(self) -> str:
        """Short label, e.g. ``ATT(0,-1)``."""
        return f"{self.estimand.value}({self.alpha:g},{self.beta:g})"


def _check_probability(p: FloatArray) -> None:
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("probabilities must lie strictly inside (0, 1)")


def weight(rule: ScoringRule, p: ArrayLike, t: ArrayLike) -> FloatArray:
    """Balancing weight w(x, t) induced by the rule.

    Args:
        rule: Scoring rule
        p: Propensity scores in (0, 1)
        t: Treatment indicators in {0, 1}

    Returns:
        Nonnegative weights, broadcast over p and t
    """
    p_arr = np.asarray(p, dtype=np.float64)
    t_arr = np.asarray(t)
    _check_probability(p_arr)
    q = 1.0 - p_arr
    treated = p_arr**rule.alpha * q ** (rule.beta + 1.0)
    control = p_arr ** (rule.alpha + 1.0) * q**rule.beta
    return np.asarray(np.where(t_arr == 1, treated, control), dtype=np.float64)


def score_grad(rule: ScoringRule, f: ArrayLike, t: ArrayLike) -> FloatArray:
    """Derivative of S(link_inv(f), t) with respect to f.

    Equals +w for treated units and -w for controls.

    Args:
        rule: Scoring rule
        f: Linear predictor values
        t: Treatment indicators in {0, 1}

    Returns:
        Per-unit derivatives
    """
    t_arr = np.asarray(t)
    w = weight(rule, link_inv(f), t_arr)
    return np.asarray(np.where(t_arr == 1, w, -w), dtype=np.float64)


def score_hess(rule: ScoringRule, f: ArrayLike, t: ArrayLike) -> FloatArray:
    """Second derivative of S(link_inv(f), t) with respect to f.

    Args:
        rule: Scoring rule
        f: Linear predictor values
        t: Treatment indicators in {0, 1}

    Returns:
        Per-unit curvatures, nonpositive whenever the rule is concave
    """
    a, b = rule.alpha, rule.beta
    p = link_inv(f)
    q = 1.0 - p
    treated = a * p**a * q ** (b + 2.0) - (b + 1.0) * p ** (a + 1.0) * q ** (b + 1.0)
    control = -(a + 1.0) * p ** (a + 1.0) * q ** (b + 1.0) + b * p ** (a + 2.0) * q**b
    return np.asarray(np.where(np.asarray(t) == 1, treated, control), dtype=np.float64)


def _closed_form_p(estimand: Estimand, p: FloatArray, t: FloatArray) -> FloatArray:
    log_odds = np.log(p) - np.log1p(-p)
    match estimand:
        case Estimand.ATE:
            treated = log_odds - 1.0 / p
            control = -log_odds - 1.0 / (1.0 - p)
        case Estimand.ATC:
            treated = -1.0 / p
            control = -log_odds
        case Estimand.ATT:
            treated = log_odds
            control = -1.0 / (1.0 - p)
        case _:
            treated = np.log(p)
            control = np.log1p(-p)
    return np.asarray(np.where(t == 1, treated, control), dtype=np.float64)


def _closed_form_f(estimand: Estimand, f: FloatArray, t: FloatArray) -> FloatArray:
    # log p = -log(1 + e^-f), log(1 - p) = -log(1 + e^f), 1/p = 1 + e^-f
    log_p = -np.logaddexp(0.0, -f)
    log_q = -np.logaddexp(0.0, f)
    match estimand:
        case Estimand.ATE:
            treated = f - (1.0 + np.exp(-f))
            control = -f - (1.0 + np.exp(f))
        case Estimand.ATC:
            treated = -(1.0 + np.exp(-f))
            control = -f
        case Estimand.ATT:
            treated = f
            control = -(1.0 + np.exp(f))
        case _:
            treated = log_p
            control = log_q
    return np.asarray(np.where(t == 1, treated, control), dtype=np.float64)


@lru_cache(maxsize=1)
def _gauss_legendre() -> tuple[FloatArray, FloatArray]:
    nodes, weights = np.polynomial.legendre.leggauss(_QUADRATURE_NODES)
    return np.asarray(nodes), np.asarray(weights)


def _integrated_grad(rule: ScoringRule, f: FloatArray, t: FloatArray) -> FloatArray:
    nodes, weights = _gauss_legendre()
    f_col = f[..., np.newaxis]
    s = f_col * (nodes + 1.0) / 2.0
    g = score_grad(rule, s, t[..., np.newaxis])
    return np.asarray((g * weights).sum(axis=-1) * f / 2.0, dtype=np.float64)


def score_objective(rule: ScoringRule, f: ArrayLike, t: ArrayLike) -> FloatArray:
    """Per-unit score on the linear predictor scale.

    Named rules use their closed forms. Any other rule integrates ``score_grad`` from
    f = 0 by Gauss-Legendre quadrature, so it is normalised to S(1/2, t) = 0.

    Args:
        rule: Scoring rule
        f: Linear predictor values
        t: Treatment indicators in {0, 1}

    Returns:
        Per-unit scores
    """
    f_arr, t_arr = np.broadcast_arrays(np.asarray(f, dtype=np.float64), np.asarray(t))
    estimand = rule.estimand
    if estimand is Estimand.CUSTOM:
        return _integrated_grad(rule, f_arr, t_arr)
    return _closed_form_f(estimand, f_arr, t_arr)


def score_value(rule: ScoringRule, p: ArrayLike, t: ArrayLike) -> FloatArray:
    """Score S(p, t) for reporting.

    The four named rules use the closed forms of the estimand table; other rules
    are evaluated by adaptive quadrature of ``score_grad`` from p = 1/2.

    Args:
        rule: Scoring rule
        p: Probabilities in (0, 1)
        t: Treatment indicators in {0, 1}

    Returns:
        Scores
    """
    p_arr, t_arr = np.broadcast_arrays(np.asarray(p, dtype=np.float64), np.asarray(t))
    _check_probability(p_arr)
    estimand = rule.estimand
    if estimand is not Estimand.CUSTOM:
        return _closed_form_p(estimand, p_arr, t_arr)

    f_arr = link(p_arr)
    out = np.empty(f_arr.shape, dtype=np.float64)
    for idx in np.ndindex(f_arr.shape):
        ti = int(t_arr[idx])
        out[idx] = quad(
            lambda s, ti=ti: float(score_grad(rule, s, ti)), 0.0, float(f_arr[idx]),
            epsabs=1e-13, epsrel=1e-12, limit=200,
        )[0]
    return out
