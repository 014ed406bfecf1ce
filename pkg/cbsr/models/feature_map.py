"""Feature expansions: intercept, monomials and standardization."""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cbsr.core.errors import DataError
from cbsr.core.types import FloatArray
from cbsr.enums.feature_kind import FeatureKind
from cbsr.models.dataset import Dataset

INTERCEPT = "(intercept)"


class FeatureMap(BaseModel):
    """Declarative description of the design matrix built from a dataset."""

    model_config = ConfigDict(frozen=True)

    kind: FeatureKind = Field(description="Expansion kind", default=FeatureKind.RAW_INTERCEPT)
    degree: int = Field(description="Total degree for polynomial expansion", default=1, ge=1)
    intercept: bool | None = Field(
        description="Prepend a constant column (polynomial and standardized kinds)", default=None
    )
    standardize: bool = Field(
        description="Standardize the monomials of a polynomial expansion", default=False
    )

    @model_validator(mode="after")
    def validate_kind_options(self) -> Self:
        """Validate that options match the kind.

        Returns:
            The validated model instance

        Raises:
            ValueError: If an option does not apply to the kind
        """
        if self.kind is not FeatureKind.POLYNOMIAL:
            if self.degree != 1:
                raise ValueError("degree is only meaningful for polynomial expansion")
            if self.standardize:
                raise ValueError("standardize applies to polynomial expansion only")
        if self.kind is FeatureKind.RAW and self.intercept:
            raise ValueError("raw expansion has no intercept")
        if self.kind is FeatureKind.RAW_INTERCEPT and self.intercept is False:
            raise ValueError("raw+intercept always has an intercept")

        return self

    @property
    def has_intercept(self) -> bool:
        """Whether column 0 is the constant 1."""
        if self.kind is FeatureKind.RAW:
            return False
        return self.intercept is not False

    def monomials(self, d: int) -> list[tuple[int, ...]]:
        """Non-constant monomials as sorted tuples of covariate indices.

        Ordered by total degree, then lexicographically.

        Args:
            d: Number of covariates

        Returns:
            One tuple per non-constant column
        """
        degree = self.degree if self.kind is FeatureKind.POLYNOMIAL else 1
        return [
            combo
            for k in range(1, degree + 1)
            for combo in combinations_with_replacement(range(d), k)
        ]

    def column_names(self, columns: tuple[str, ...]) -> tuple[str, ...]:
        """Labels of the expanded columns.

        Args:
            columns: Covariate names

        Returns:
            Names such as ``(intercept)``, ``x1``, ``x1*x2``, ``x1^2``
        """
        names = [INTERCEPT] if self.has_intercept else []
        for combo in self.monomials(len(columns)):
            parts = []
            for j in sorted(set(combo)):
                power = combo.count(j)
                parts.append(columns[j] if power == 1 else f"{columns[j]}^{power}")
            names.append("*".join(parts))
        return tuple(names)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Expanded features with their labels."""

    values: FloatArray
    columns: tuple[str, ...]
    intercept: bool

    @property
    def m(self) -> int:
        """Number of columns."""
        return int(self.values.shape[1])

    def scales(self) -> FloatArray:
        """Per-column magnitude max(1, max |value|) used for relative tolerances."""
        return np.maximum(1.0, np.abs(self.values).max(axis=0))

    def take(self, index: list[int]) -> "DesignMatrix":
        """Subset of columns, in the given order.

        Args:
            index: Column positions

        Returns:
            The reduced design
        """
        keep = list(index)
        return DesignMatrix(
            values=self.values[:, keep],
            columns=tuple(self.columns[k] for k in keep),
            intercept=self.intercept and bool(keep) and keep[0] == 0,
        )


def expand(ds: Dataset, fm: FeatureMap | None = None) -> DesignMatrix:
    """Build the design matrix declared by a feature map.

    Args:
        ds: Dataset
        fm: Feature map, intercept plus raw covariates by default

    Returns:
        The design matrix, intercept (if any) in column 0

    Raises:
        DataError: If a column to standardize has zero variance
    """
    fm = fm or FeatureMap()
    cols = [np.prod(ds.x[:, list(combo)], axis=1) for combo in fm.monomials(ds.d)]
    names = fm.column_names(ds.columns)
    body = np.column_stack(cols) if cols else np.empty((ds.n, 0))

    if fm.kind is FeatureKind.STANDARDIZED or fm.standardize:
        sd = body.std(axis=0, ddof=1)
        offset = 1 if fm.has_intercept else 0
        degenerate = np.flatnonzero(~(sd > 0))
        if degenerate.size:
            raise DataError(
                "zero-variance column cannot be standardized",
                column=names[offset + int(degenerate[0])],
            )
        body = (body - body.mean(axis=0)) / sd

    values = np.column_stack([np.ones(ds.n), body]) if fm.has_intercept else body
    return DesignMatrix(
        values=np.ascontiguousarray(values), columns=names, intercept=fm.has_intercept
    )


def design_from_array(values: FloatArray, intercept: bool = True) -> DesignMatrix:
    """Wrap a raw matrix as a design, optionally prepending the intercept.

    Args:
        values: n x m feature matrix
        intercept: Whether to prepend a constant column

    Returns:
        The design matrix
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    names = tuple(f"f{j + 1}" for j in range(arr.shape[1]))
    if intercept:
        arr = np.column_stack([np.ones(arr.shape[0]), arr])
        names = (INTERCEPT, *names)
    return DesignMatrix(values=arr, columns=names, intercept=intercept)


def as_design(design: "DesignMatrix | FloatArray") -> DesignMatrix:
    """Accept either a design or a bare matrix (intercept detected from column 0).

    Args:
        design: Design matrix or n x m array

    Returns:
        The design matrix
    """
    if isinstance(design, DesignMatrix):
        return design
    arr = np.asarray(design, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, np.newaxis]
    intercept = bool(arr.shape[1]) and bool(np.all(arr[:, 0] == 1.0))
    names = tuple(
        INTERCEPT if (j == 0 and intercept) else f"f{j + 1}" for j in range(arr.shape[1])
    )
    return DesignMatrix(values=arr, columns=names, intercept=intercept)
