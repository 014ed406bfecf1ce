"""Forward stepwise selection of propensity model columns.

Each step adds the candidate column whose refit reaches the largest average score.
Under the fitting rule's own weights every active column is then exactly balanced.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from cbsr.balance.diagnostics import std_diff
from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import DataError, DomainError, NumericalError
from cbsr.core.types import FloatArray
from cbsr.fitting.glm import PropensityFit, check_inputs, check_rule, fit_mle_score
from cbsr.models.feature_map import INTERCEPT, DesignMatrix, as_design
from cbsr.scoring.rules import ScoringRule

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StepwiseStep:
    """One model on the path."""

    added: str | None
    index: int | None
    fit: PropensityFit | None
    std_diffs: dict[str, float]
    error: str | None = None


@dataclass(eq=False)
class StepwisePath:
    """Sequence of nested models, starting from the intercept-only fit."""

    steps: list[StepwiseStep] = field(default_factory=list)
    active: list[int] = field(default_factory=list)
    columns: tuple[str, ...] = ()

    @property
    def final(self) -> PropensityFit:
        """The last successful fit."""
        for step in reversed(self.steps):
            if step.fit is not None:
                return step.fit
        raise DomainError("stepwise path contains no successful fit")

    @property
    def stopped_early(self) -> bool:
        """Whether the path ended on a failed step."""
        return bool(self.steps) and self.steps[-1].error is not None

    def active_columns(self) -> list[str]:
        """Names of the active columns, intercept first."""
        return [self.columns[k] for k in self.active]


def _with_intercept(dm: DesignMatrix) -> DesignMatrix:
    if dm.intercept:
        return dm
    return DesignMatrix(
        values=np.column_stack([np.ones(dm.values.shape[0]), dm.values]),
        columns=(INTERCEPT, *dm.columns),
        intercept=True,
    )


def _step_diffs(
    dm: DesignMatrix, t: ArrayLike, fit: PropensityFit, weight_rule: ScoringRule
) -> dict[str, float]:
    weights = fit.weight_set(t, fitter="stepwise", rule=weight_rule)
    return {dm.columns[k]: std_diff(dm, weights, k) for k in range(1, dm.m)}


def forward_stepwise(
    candidates: DesignMatrix | FloatArray,
    t: ArrayLike,
    fit_rule: ScoringRule,
    k_max: int,
    weight_rule: ScoringRule | None = None,
    settings: SolverSettings | None = None,
) -> StepwisePath:
    """Build a path of nested propensity models by forward selection.

    Args:
        candidates: Candidate columns; an intercept is prepended if missing and is
            always active
        t: Treatment indicators
        fit_rule: Rule maximized at every step
        k_max: Maximum number of columns added after the intercept
        weight_rule: Rule whose weights are used for the reported standardized
            differences, the fitting rule by default
        settings: Solver settings

    Returns:
        The path; a step whose fits all fail is recorded with its error and ends it
    """
    if k_max < 0:
        raise DomainError(f"k_max must be nonnegative, got {k_max}")
    settings = resolve(settings)
    check_rule(fit_rule)
    weight_rule = weight_rule or fit_rule
    dm = _with_intercept(as_design(candidates))
    t_arr = check_inputs(dm, t)
    if dm.m < 2:
        raise DomainError("stepwise selection needs at least one candidate column")

    path = StepwisePath(active=[0], columns=dm.columns)
    try:
        base = fit_mle_score(dm.take([0]), t_arr, fit_rule, settings=settings)
    except NumericalError as e:
        path.steps.append(
            StepwiseStep(added=None, index=None, fit=None, std_diffs={}, error=str(e))
        )
        return path
    path.steps.append(
        StepwiseStep(
            added=INTERCEPT, index=0, fit=base, std_diffs=_step_diffs(dm, t_arr, base, weight_rule)
        )
    )

    current = base
    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        for _ in range(min(k_max, dm.m - 1)):
            remaining = [k for k in range(1, dm.m) if k not in path.active]
            warm = np.append(current.theta, 0.0)

            def refit(
                k: int, active: tuple[int, ...] = tuple(path.active), warm: FloatArray = warm
            ) -> PropensityFit:
                return fit_mle_score(
                    dm.take([*active, k]), t_arr, fit_rule, settings=settings, theta0=warm
                )

            futures = {k: pool.submit(refit, k) for k in remaining}
            best_k: int | None = None
            best: PropensityFit | None = None
            errors: list[str] = []
            for k in remaining:
                try:
                    fit = futures[k].result()
                except (NumericalError, DataError) as e:
                    logger.debug("candidate %s failed: %s", dm.columns[k], e)
                    errors.append(f"{dm.columns[k]}: {e}")
                    continue
                # Strict comparison keeps the lower index on ties.
                if best is None or fit.objective > best.objective:
                    best_k, best = k, fit

            if best is None or best_k is None:
                logger.warning("stepwise path stopped: every candidate fit failed")
                path.steps.append(
                    StepwiseStep(
                        added=None, index=None, fit=None, std_diffs={}, error="; ".join(errors)
                    )
                )
                break

            path.active.append(best_k)
            current = best
            path.steps.append(
                StepwiseStep(
                    added=dm.columns[best_k],
                    index=best_k,
                    fit=best,
                    std_diffs=_step_diffs(dm, t_arr, best, weight_rule),
                )
            )
            logger.info(
                "stepwise step %d: added %s, objective %.10g",
                len(path.active) - 1,
                dm.columns[best_k],
                best.objective,
            )
    return path
