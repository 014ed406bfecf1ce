"""Gradient boosting of the average score with shallow regression trees.

Starting from the intercept-only fit, every iteration fits a least-squares tree to
the per-unit score gradients, finds the best step along it by a one-dimensional
line search and adds the shrunken step to the linear predictor.
"""

import logging
from dataclasses import dataclass, field
from typing import Self

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq

from cbsr.balance.diagnostics import max_ks
from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DataError, DomainError
from cbsr.core.types import FloatArray, IntArray
from cbsr.fitting.glm import check_rule, fit_mle_score
from cbsr.models.dataset import Dataset
from cbsr.models.weights import Provenance, WeightSet
from cbsr.scoring.link import link_inv
from cbsr.scoring.rules import ScoringRule, score_grad, score_objective, weight

logger = logging.getLogger(__name__)

MAX_DEPTH = 3
_ETA_CAP = 1e8


class TreeNode(BaseModel):
    """A node of an axis-aligned regression tree; leaves carry a value."""

    model_config = ConfigDict(frozen=True)

    feature: int | None = Field(description="Split feature of an internal node", default=None)
    threshold: float | None = Field(
        description="Go left when x[feature] <= threshold", default=None
    )
    value: float = Field(description="Leaf value (mean gradient of the leaf)", default=0.0)
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        """Whether the node has no children."""
        return self.feature is None

    @property
    def depth(self) -> int:
        """Depth of the subtree rooted here."""
        if self.left is None or self.right is None:
            return 0
        return 1 + max(self.left.depth, self.right.depth)

    def predict(self, x: FloatArray) -> FloatArray:
        """Evaluate the tree on the rows of x."""
        if self.left is None or self.right is None or self.feature is None:
            return np.full(x.shape[0], self.value)
        out = np.empty(x.shape[0])
        go_left = x[:, self.feature] <= self.threshold
        out[go_left] = self.left.predict(x[go_left])
        out[~go_left] = self.right.predict(x[~go_left])
        return out


@dataclass(frozen=True)
class Stump:
    """Best single split of a node."""

    feature: int
    threshold: float
    gain: float


def _best_split(x: FloatArray, u: FloatArray) -> Stump | None:
    """Split maximizing sum over both sides of (sum u)^2 / size.

    Candidate thresholds are midpoints between consecutive distinct values; ties
    resolve to the lower feature index, then the lower threshold.
    """
    n = u.shape[0]
    best: Stump | None = None
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        left_sum = np.cumsum(u[order])[:-1]
        valid = np.flatnonzero(xs[1:] > xs[:-1])
        if valid.size == 0:
            continue
        n_left = valid + 1.0
        s_left = left_sum[valid]
        s_right = u.sum() - s_left
        gain = s_left**2 / n_left + s_right**2 / (n - n_left)
        k = int(np.argmax(gain))
        if best is None or gain[k] > best.gain:
            pos = valid[k]
            best = Stump(feature=j, threshold=0.5 * (xs[pos] + xs[pos + 1]), gain=float(gain[k]))
    return best


def fit_tree(x: FloatArray, u: FloatArray, depth: int) -> TreeNode:
    """Least-squares regression tree of the given depth, leaf values the mean of u.

    Args:
        x: n x d covariates
        u: Targets
        depth: Maximum depth

    Returns:
        The root node
    """
    if depth == 0 or u.shape[0] < 2:
        return TreeNode(value=float(u.mean()) if u.size else 0.0)
    split = _best_split(x, u)
    if split is None:
        return TreeNode(value=float(u.mean()))
    go_left = x[:, split.feature] <= split.threshold
    return TreeNode(
        feature=split.feature,
        threshold=split.threshold,
        value=float(u.mean()),
        left=fit_tree(x[go_left], u[go_left], depth - 1),
        right=fit_tree(x[~go_left], u[~go_left], depth - 1),
    )


def most_imbalanced_stump(x: ArrayLike, u: ArrayLike) -> Stump:
    """The stump direction with the largest imbalance sum_i u_i h(X_i) at unit L2 norm.

    For a stump with leaves L and R the best unit-norm leaf values give imbalance
    sqrt((sum_L u)^2 / |L| + (sum_R u)^2 / |R|), the least-squares split criterion.

    Args:
        x: n x d covariates
        u: Signed weights (score gradients)

    Returns:
        The stump

    Raises:
        DataError: If no feature has two distinct values
    """
    xa = _as_matrix(x)
    split = _best_split(xa, np.asarray(u, dtype=np.float64))
    if split is None:
        raise DataError("no feature has two distinct values")
    return split


def line_search(f: ArrayLike, h: ArrayLike, rule: ScoringRule, t: ArrayLike) -> float:
    """Step size maximizing eta -> mean S(f + eta h, T) over eta >= 0.

    Args:
        f: Current linear predictor
        h: Direction
        rule: Concave scoring rule
        t: Treatment indicators

    Returns:
        The maximizer, 0 when h is not an ascent direction
    """
    f_arr = np.asarray(f, dtype=np.float64)
    h_arr = np.asarray(h, dtype=np.float64)
    t_arr = np.asarray(t)
    if not np.any(h_arr):
        return 0.0

    def slope(eta: float) -> float:
        return float(np.mean(score_grad(rule, f_arr + eta * h_arr, t_arr) * h_arr))

    if slope(0.0) <= 0.0:
        return 0.0
    cap = _ETA_CAP / float(np.max(np.abs(h_arr)))
    hi = 1.0 / float(np.max(np.abs(h_arr)))
    while slope(hi) > 0.0:
        if hi >= cap:
            logger.warning("line search reached its cap at eta=%.3g", cap)
            return cap
        hi = min(2.0 * hi, cap)
    return float(brentq(slope, 0.0, hi, xtol=1e-14, rtol=1e-12, maxiter=200))


class EnsembleSpec(BaseModel):
    """Serializable form of a tree ensemble."""

    rule: ScoringRule
    f0: float
    shrinkage: float
    depth: int
    trees: list[TreeNode]
    etas: list[float]


@dataclass(eq=False, kw_only=True)
class TreeEnsemble:
    """Boosted model f = f0 + shrinkage * sum_k eta_k * tree_k."""

    rule: ScoringRule
    f0: float
    shrinkage: float
    depth: int
    trees: list[TreeNode] = field(default_factory=list)
    etas: list[float] = field(default_factory=list)
    fitted_f: FloatArray = field(default_factory=lambda: np.empty(0))
    objectives: list[float] = field(default_factory=list)
    ks_path: list[float] = field(default_factory=list)
    skipped: int = 0
    stopped_by: str | None = None

    @property
    def fitted_p(self) -> FloatArray:
        """Fitted probabilities."""
        return link_inv(self.fitted_f)

    @property
    def n_trees(self) -> int:
        """Number of accepted trees."""
        return len(self.trees)

    def predict(self, x: ArrayLike) -> FloatArray:
        """Linear predictor at covariate rows.

        Args:
            x: m x d covariates

        Returns:
            f0 + shrinkage * sum_k eta_k tree_k(x)
        """
        xa = _as_matrix(x)
        out = np.full(xa.shape[0], self.f0)
        for tree, eta in zip(self.trees, self.etas, strict=True):
            out += self.shrinkage * eta * tree.predict(xa)
        return out

    def weights(self, t: ArrayLike) -> FloatArray:
        """Raw weights at the fitted probabilities."""
        return weight(self.rule, self.fitted_p, t)

    def weight_set(self, t: ArrayLike, rule: ScoringRule | None = None) -> WeightSet:
        """Weights with provenance.

        Args:
            t: Treatment indicators
            rule: Rule defining the weights, the fitting rule by default

        Returns:
            The weight set
        """
        rule = rule or self.rule
        return WeightSet.from_raw(
            weight(rule, self.fitted_p, t), np.asarray(t), Provenance(rule=rule, fitter="boost")
        )

    def to_spec(self) -> EnsembleSpec:
        """Serializable description."""
        return EnsembleSpec(
            rule=self.rule,
            f0=self.f0,
            shrinkage=self.shrinkage,
            depth=self.depth,
            trees=self.trees,
            etas=self.etas,
        )

    def to_json(self) -> str:
        """JSON with splits, leaves, shrinkage and step sizes."""
        return self.to_spec().model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str, x: ArrayLike | None = None) -> Self:
        """Rebuild an ensemble, optionally evaluating it on covariates.

        Args:
            text: Output of ``to_json``
            x: Covariates at which to evaluate ``fitted_f``

        Returns:
            The ensemble
        """
        spec = EnsembleSpec.model_validate_json(text)
        ens = cls(
            rule=spec.rule,
            f0=spec.f0,
            shrinkage=spec.shrinkage,
            depth=spec.depth,
            trees=list(spec.trees),
            etas=list(spec.etas),
        )
        if x is not None:
            ens.fitted_f = ens.predict(x)
        return ens


def _as_matrix(x: Dataset | ArrayLike) -> FloatArray:
    if isinstance(x, Dataset):
        return x.x
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, np.newaxis] if arr.ndim == 1 else arr


def _weights_at(rule: ScoringRule, f: FloatArray, t: IntArray) -> WeightSet:
    provenance = Provenance(rule=rule, fitter="boost")
    return WeightSet.from_raw(weight(rule, link_inv(f), t), t, provenance)


def _mean_score(rule: ScoringRule, f: FloatArray, t: IntArray) -> float:
    return float(np.mean(score_objective(rule, f, t)))


def fit_boost(
    x: Dataset | ArrayLike,
    t: ArrayLike,
    rule: ScoringRule,
    depth: int = 1,
    n_trees: int = 100,
    shrinkage: float = 0.1,
    cv_target: float | None = None,
    track_ks: bool = False,
    settings: SolverSettings | None = None,
) -> TreeEnsemble:
    """Boost the average score with depth-limited trees.

    Args:
        x: Covariates
        t: Treatment indicators
        rule: Concave scoring rule
        depth: Tree depth, 1 to 3
        n_trees: Number of boosting iterations
        shrinkage: Multiplier applied to every line-search step, in (0, 1]
        cv_target: Stop before the weights' coefficient of variation exceeds this
        track_ks: Record the largest weighted KS statistic after every iteration
        settings: Solver settings

    Returns:
        The ensemble with its objective path
    """
    if not 1 <= depth <= MAX_DEPTH:
        raise DomainError(f"tree depth must be between 1 and {MAX_DEPTH}, got {depth}")
    if not 0.0 < shrinkage <= 1.0:
        raise DomainError(f"shrinkage must lie in (0, 1], got {shrinkage}")
    if n_trees < 0:
        raise DomainError(f"number of trees must be nonnegative, got {n_trees}")
    check_rule(rule)
    xa = _as_matrix(x)
    t_arr = np.asarray(t)
    base = fit_mle_score(np.ones((xa.shape[0], 1)), t_arr, rule, settings=resolve(settings))
    t_arr = t_arr.astype(np.int64)

    f = base.fitted_f.copy()
    ens = TreeEnsemble(rule=rule, f0=float(base.theta[0]), shrinkage=shrinkage, depth=depth)
    ens.objectives.append(_mean_score(rule, f, t_arr))
    if track_ks:
        ens.ks_path.append(max_ks(xa, _weights_at(rule, f, t_arr)))

    for iteration in range(1, n_trees + 1):
        u = score_grad(rule, f, t_arr)
        tree = fit_tree(xa, u, depth)
        h = tree.predict(xa)
        if tree.is_leaf or not np.any(h):
            ens.skipped += 1
            logger.warning("boosting iteration %d skipped: degenerate tree", iteration)
            continue
        eta = line_search(f, h, rule, t_arr)
        if eta == 0.0:
            ens.skipped += 1
            logger.warning("boosting iteration %d skipped: no ascent along the tree", iteration)
            continue

        f_new = f + shrinkage * eta * h
        if cv_target is not None:
            cv = _weights_at(rule, f_new, t_arr).cv()
            if cv > cv_target:
                ens.stopped_by = "cv"
                logger.info("boosting stopped at iteration %d: weight CV %.3f", iteration, cv)
                break

        f = f_new
        ens.trees.append(tree)
        ens.etas.append(eta)
        ens.objectives.append(_mean_score(rule, f, t_arr))
        if track_ks:
            ens.ks_path.append(max_ks(xa, _weights_at(rule, f, t_arr)))
        logger.debug(
            "boost iter %d: eta=%.4g objective=%.12g", iteration, eta, ens.objectives[-1]
        )

    ens.fitted_f = f
    return ens
