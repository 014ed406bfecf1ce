"""Balancing weights with their provenance."""

from dataclasses import dataclass
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cbsr.core.errors import DomainError
from cbsr.core.types import FloatArray, IntArray
from cbsr.scoring.rules import ScoringRule


class Provenance(BaseModel):
    """Where a set of weights came from."""

    model_config = ConfigDict(frozen=True)

    rule: ScoringRule | None = Field(description="Scoring rule defining w(x, t)", default=None)
    fitter: str = Field(description="Fitter or solver identifier")
    lambda_: float | None = Field(description="Penalty level, if any", default=None)
    scale: str = Field(
        description="Normalization convention of the estimator weights",
        default="group-normalized: each treatment group sums to 1",
    )


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Raw per-unit weights and their per-group normalized copy."""

    w: FloatArray
    normalized: FloatArray
    t: IntArray
    provenance: Provenance

    @classmethod
    def from_raw(cls, w: FloatArray, t: IntArray, provenance: Provenance) -> Self:
        """Normalize raw weights separately within each treatment group.

        Args:
            w: Nonnegative raw weights
            t: Treatment indicators
            provenance: Origin of the weights

        Returns:
            The weight set

        Raises:
            DomainError: If a weight is negative or non-finite, or a group sums to 0
        """
        w = np.array(w, dtype=np.float64)
        t = np.array(t, dtype=np.int64)
        if w.shape != t.shape:
            raise DomainError(f"weights have shape {w.shape}, treatment has {t.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DomainError("weights must be finite and nonnegative")
        normalized = np.empty_like(w)
        for group in (0, 1):
            mask = t == group
            total = w[mask].sum()
            if not total > 0:
                raise DomainError(f"weights of treatment group {group} sum to zero")
            normalized[mask] = w[mask] / total
        for arr in (w, normalized, t):
            arr.setflags(write=False)
        return cls(w=w, normalized=normalized, t=t, provenance=provenance)

    @classmethod
    def uniform(cls, t: IntArray) -> Self:
        """Unit weights, i.e. the unweighted comparison.

        Args:
            t: Treatment indicators

        Returns:
            The weight set
        """
        t = np.asarray(t, dtype=np.int64)
        return cls.from_raw(np.ones(t.shape), t, Provenance(fitter="uniform"))

    def group_sums(self) -> tuple[float, float]:
        """Sums of raw weights over (controls, treated)."""
        return float(self.w[self.t == 0].sum()), float(self.w[self.t == 1].sum())

    def signed(self, normalized: bool = True) -> FloatArray:
        """Weights multiplied by +1 for treated and -1 for controls.

        Args:
            normalized: Use the group-normalized weights

        Returns:
            Signed weights, so that imbalance(g) = signed @ g
        """
        w = self.normalized if normalized else self.w
        return np.asarray(np.where(self.t == 1, w, -w), dtype=np.float64)

    def norm2(self) -> float:
        """Euclidean norm of the normalized weights."""
        return float(np.linalg.norm(self.normalized))

    def cv(self) -> float:
        """Largest within-group coefficient of variation of the raw weights.

        Groups whose weights are constant contribute 0.

        Returns:
            max over groups of SD / mean (population SD)
        """
        out = 0.0
        for group in (0, 1):
            wg = self.w[self.t == group]
            mean = wg.mean()
            if mean > 0:
                out = max(out, float(wg.std() / mean))
        return out
