"""Covariate balance diagnostics: standardized differences and weighted KS."""

import numpy as np

from cbsr.core.errors import DataError, DomainError
from cbsr.core.types import FloatArray
from cbsr.models.dataset import Dataset
from cbsr.models.feature_map import INTERCEPT, DesignMatrix
from cbsr.models.reports import BalanceReport, FeatureBalance
from cbsr.models.weights import WeightSet

type Columns = Dataset | DesignMatrix | FloatArray


def _labels(data: Columns) -> tuple[str, ...]:
    if isinstance(data, Dataset):
        return data.columns
    if isinstance(data, DesignMatrix):
        return data.columns
    arr = np.asarray(data)
    width = 1 if arr.ndim == 1 else arr.shape[1]
    return tuple(f"x{j + 1}" for j in range(width))


def _matrix(data: Columns) -> FloatArray:
    if isinstance(data, Dataset):
        return data.x
    if isinstance(data, DesignMatrix):
        return data.values
    arr = np.asarray(data, dtype=np.float64)
    return arr[:, np.newaxis] if arr.ndim == 1 else arr


def feature_column(data: Columns, feature: int | str) -> tuple[str, FloatArray]:
    """Look up one feature by position or name.

    Args:
        data: Dataset, design matrix or n x d array
        feature: Column index or name

    Returns:
        The feature's name and values

    Raises:
        DataError: If the feature does not exist
    """
    labels = _labels(data)
    if isinstance(feature, str):
        if feature not in labels:
            raise DataError("unknown feature", column=feature)
        index = labels.index(feature)
    else:
        index = int(feature)
        if not 0 <= index < len(labels):
            raise DataError(f"feature index {index} out of range for {len(labels)} columns")
    return labels[index], _matrix(data)[:, index]


def std_diff(data: Columns, weights: WeightSet, feature: int | str) -> float:
    """Weighted standardized difference of a feature, in percent.

    The numerator uses group-normalized weights; the denominator is the pooled SD
    sqrt((s1^2 + s0^2) / 2) of the unweighted within-group variances.

    Args:
        data: Dataset, design matrix or n x d array
        weights: Weight set
        feature: Column index or name

    Returns:
        100 * (weighted treated mean - weighted control mean) / pooled SD

    Raises:
        DataError: If the pooled variance is zero
    """
    name, x = feature_column(data, feature)
    t = weights.t
    if x.shape != t.shape:
        raise DomainError(f"feature has {x.shape[0]} rows, weights have {t.shape[0]}")
    v1 = np.var(x[t == 1], ddof=1) if np.sum(t == 1) > 1 else 0.0
    v0 = np.var(x[t == 0], ddof=1) if np.sum(t == 0) > 1 else 0.0
    pooled = np.sqrt((v1 + v0) / 2.0)
    if not pooled > 0:
        raise DataError("pooled variance is zero", column=name)
    return float(100.0 * (weights.signed() @ x) / pooled)


def weighted_ks(data: Columns, weights: WeightSet, feature: int | str) -> float:
    """Weighted two-sample Kolmogorov-Smirnov statistic of a feature.

    Args:
        data: Dataset, design matrix or n x d array
        weights: Weight set; the group-normalized weights define each ECDF
        feature: Column index or name

    Returns:
        sup_x |F1(x) - F0(x)| over the sample points, in [0, 1]
    """
    _, x = feature_column(data, feature)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    diff = np.cumsum(weights.signed()[order])
    # Evaluate only after the last of a run of tied values.
    last = np.append(xs[1:] != xs[:-1], True)
    return float(min(1.0, np.max(np.abs(diff[last]))))


def balance_report(
    data: Columns,
    weights: WeightSet,
    features: list[int | str] | None = None,
    dual_gap: float | None = None,
) -> BalanceReport:
    """Balance summary of several features.

    Args:
        data: Dataset, design matrix or n x d array
        weights: Weight set
        features: Columns to report, all but the intercept by default
        dual_gap: Primal-dual gap to attach, if the weights came from a dual solver

    Returns:
        The report
    """
    labels = _labels(data)
    chosen: list[int | str] = (
        [j for j, name in enumerate(labels) if name != INTERCEPT] if features is None else features
    )
    rows = []
    imbalance = 0.0
    for feature in chosen:
        name, x = feature_column(data, feature)
        rows.append(
            FeatureBalance(
                feature=name,
                std_diff=std_diff(data, weights, feature),
                ks=weighted_ks(data, weights, feature),
            )
        )
        imbalance = max(imbalance, abs(float(weights.signed() @ x)))
    return BalanceReport(
        features=rows,
        max_abs_std_diff=max((abs(r.std_diff) for r in rows), default=0.0),
        max_ks=max((r.ks for r in rows), default=0.0),
        max_abs_imbalance=imbalance,
        dual_gap=dual_gap,
    )


def max_ks(data: Columns, weights: WeightSet) -> float:
    """Largest weighted KS statistic over all columns."""
    labels = _labels(data)
    stats = [weighted_ks(data, weights, j) for j, name in enumerate(labels) if name != INTERCEPT]
    return max(stats, default=0.0)
