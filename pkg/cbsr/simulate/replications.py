"""Replication runner for the simulation studies.

Each replicate draws a dataset from its own stream, applies every method and records
the estimate and both intervals. Replicates run on a thread pool; records are
aggregated in replicate order so that results do not depend on scheduling.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.linalg import LinAlgError

from cbsr.core.config import SolverSettings, resolve
from cbsr.core.errors import CBSRError, ConfigError
from cbsr.enums.design import NormCLMode, OutcomeModelKind, SimDesign
from cbsr.enums.fitter_kind import FitterKind
from cbsr.enums.kernel_kind import KernelKind
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.estimation.inference import HonestCI, honest_ci, naive_ci
from cbsr.estimation.pipeline import (
    FittedWeights,
    MethodConfig,
    design_for,
    estimate_effect,
    estimate_sigma,
    fit_weights,
    plugin_norm_cl,
)
from cbsr.fitting.kernel import Kernel, KernelFit, rkhs_norm
from cbsr.models.feature_map import DesignMatrix
from cbsr.models.reports import CellMetrics
from cbsr.simulate.generators import SimSpec, SimulatedData, generate, kang_schafer_candidates

logger = logging.getLogger(__name__)

STOP_EARLY_CV = 0.5
STOP_LATE_CV = 1.2
HIGHDIM_CV = 1.0
FAILURE_FLAG_SHARE = 0.1


@dataclass(frozen=True)
class ReplicateRecord:
    """Outcome of one method on one replicate."""

    replicate: int
    method: str
    tau_hat: float | None = None
    error: float | None = None
    naive_half_width: float | None = None
    naive_covers: bool | None = None
    honest_half_width: float | None = None
    honest_covers: bool | None = None
    max_bias: float | None = None
    failure: str | None = None


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    """Per-method aggregates of one cell with the underlying records."""

    spec: SimSpec
    seed: int
    replicates: int
    metrics: list[CellMetrics]
    records: list[ReplicateRecord]


def _design(sim: SimulatedData, spec: SimSpec, method: MethodConfig) -> DesignMatrix:
    if spec.design is SimDesign.KANG_SCHAFER:
        stepwise = method.fitter is FitterKind.STEPWISE
        return kang_schafer_candidates(sim.dataset, intercept=not stepwise)
    return design_for(sim.dataset, method)


def oracle_norm_cl(
    sim: SimulatedData, method: MethodConfig, fitted: FittedWeights
) -> float | None:
    """Norm of the true outcome function in the space whose bias bound the fit certifies.

    Args:
        sim: Simulated data
        method: Method configuration
        fitted: Fitted weights

    Returns:
        ||beta||_a for penalized linear fits, the RKHS norm of g0 under the fit's Gram
        matrix for kernel fits, None when the outcome function lies outside the space
    """
    if method.fitter in (FitterKind.L1, FitterKind.L2):
        if sim.beta is None:
            return None
        order = 1 if method.penalty_norm is PenaltyNorm.L1 else 2
        return float(np.linalg.norm(sim.beta, ord=order))
    if isinstance(fitted.fit, KernelFit):
        if sim.beta is not None and fitted.fit.kernel.kind is KernelKind.LINEAR:
            return float(np.linalg.norm(sim.beta))
        return rkhs_norm(fitted.fit.gram, sim.g0)
    return None


def evaluate_method(
    sim: SimulatedData,
    spec: SimSpec,
    method: MethodConfig,
    replicate: int,
    level: float = 0.95,
    norm_cl_mode: NormCLMode = NormCLMode.ORACLE,
    norm_cl: float | None = None,
    seed: int | None = None,
    settings: SolverSettings | None = None,
) -> ReplicateRecord:
    """Apply one method to one simulated dataset.

    Args:
        sim: Simulated data
        spec: Cell the data was drawn from
        method: Method configuration
        replicate: Replicate index, recorded
        level: Interval coverage level
        norm_cl_mode: Source of the outcome norm limit of the honest interval
        norm_cl: Norm limit for ``norm_cl_mode=constant``
        seed: Seed of the outcome regressions
        settings: Solver settings

    Returns:
        The record; fitter and estimator errors propagate
    """
    ds = sim.dataset
    design = _design(sim, spec, method)
    fitted = fit_weights(ds, method, design=design, true_p=sim.p, settings=settings)
    estimate, g0_hat = estimate_effect(ds, fitted, method, seed=seed)
    sigma = sim.sigma if norm_cl_mode is NormCLMode.ORACLE else estimate_sigma(ds, g0_hat)
    naive = naive_ci(estimate, sigma, level)

    honest: HonestCI | None = None
    if fitted.bias_factor is not None and method.outcome_model is None:
        match norm_cl_mode:
            case NormCLMode.ORACLE:
                cl = oracle_norm_cl(sim, method, fitted)
            case NormCLMode.PLUGIN:
                cl = plugin_norm_cl(sim.dataset, method, fitted, design, seed=seed)
            case _:
                cl = norm_cl
        if cl is not None:
            honest = honest_ci(estimate, fitted.bias_factor, cl, sigma, level, norm_cl_mode)

    return ReplicateRecord(
        replicate=replicate,
        method=method.label,
        tau_hat=estimate.tau_hat,
        error=estimate.tau_hat - sim.tau,
        naive_half_width=naive.half_width,
        naive_covers=naive.covers(sim.tau),
        honest_half_width=None if honest is None else honest.half_width,
        honest_covers=None if honest is None else honest.covers(sim.tau),
        max_bias=None if honest is None else honest.half_width_bias,
    )


def run_replicate(
    spec: SimSpec,
    methods: list[MethodConfig],
    seed: int,
    replicate: int,
    level: float = 0.95,
    norm_cl_mode: NormCLMode = NormCLMode.ORACLE,
    norm_cl: float | None = None,
    settings: SolverSettings | None = None,
) -> list[ReplicateRecord]:
    """Draw replicate ``replicate`` of a cell and apply every method to it.

    A failing method is recorded with its error message; the others still run.

    Args:
        spec: Cell
        methods: Methods to apply
        seed: Run seed
        replicate: Replicate index
        level: Interval coverage level
        norm_cl_mode: Source of the outcome norm limit
        norm_cl: Norm limit for ``norm_cl_mode=constant``
        settings: Solver settings

    Returns:
        One record per method, in method order
    """
    sim = generate(spec, seed, replicate)
    records = []
    for method in methods:
        try:
            record = evaluate_method(
                sim,
                spec,
                method,
                replicate,
                level=level,
                norm_cl_mode=norm_cl_mode,
                norm_cl=norm_cl,
                seed=seed + replicate,
                settings=settings,
            )
        except (CBSRError, ValueError, LinAlgError) as e:
            logger.warning("replicate %d, method %s failed: %s", replicate, method.label, e)
            record = ReplicateRecord(
                replicate=replicate, method=method.label, failure=f"{type(e).__name__}: {e}"
            )
        records.append(record)
    return records


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def aggregate(cell: str, method: str, records: list[ReplicateRecord]) -> CellMetrics:
    """Summarize one method's records, in replicate order.

    Args:
        cell: Cell label
        method: Method label
        records: That method's records

    Returns:
        The metrics
    """
    ok = [r for r in records if r.failure is None and r.error is not None]
    errors = [r.error for r in ok if r.error is not None]
    n_failed = len(records) - len(ok)
    honest = [r for r in ok if r.honest_half_width is not None]
    ratios = [
        r.honest_half_width / r.naive_half_width
        for r in honest
        if r.honest_half_width is not None and r.naive_half_width
    ]
    return CellMetrics(
        cell=cell,
        method=method,
        replicates=len(records),
        n_failed=n_failed,
        flagged=n_failed > FAILURE_FLAG_SHARE * len(records),
        rmse=None if not errors else float(np.sqrt(np.mean(np.square(errors)))),
        bias=None if not errors else abs(float(np.mean(errors))),
        mean_abs_error=None if not errors else float(np.mean(np.abs(errors))),
        max_bias=_mean([r.max_bias for r in honest if r.max_bias is not None]),
        coverage_naive=_mean([float(bool(r.naive_covers)) for r in ok]),
        coverage_honest=_mean([float(bool(r.honest_covers)) for r in honest]),
        ci_ratio=_mean(ratios),
    )


def run_replications(
    spec: SimSpec,
    methods: list[MethodConfig],
    replicates: int,
    seed: int,
    level: float = 0.95,
    norm_cl_mode: NormCLMode | str = NormCLMode.ORACLE,
    norm_cl: float | None = None,
    settings: SolverSettings | None = None,
) -> ReplicationResult:
    """Run a simulation cell.

    Args:
        spec: Cell
        methods: Methods to compare; labels must be distinct
        replicates: Number of replicates R, at least 2
        seed: Run seed; replicate r draws from the stream (seed, r)
        level: Interval coverage level
        norm_cl_mode: oracle, constant or plugin
        norm_cl: Norm limit for ``norm_cl_mode=constant``
        settings: Solver settings; ``threads`` caps concurrent replicates

    Returns:
        One metrics row per method and every replicate record

    Raises:
        ConfigError: On too few replicates, duplicate labels or a missing constant
    """
    settings = resolve(settings)
    mode = NormCLMode(norm_cl_mode)
    if replicates < 2:
        raise ConfigError(f"at least 2 replicates are needed, got {replicates}")
    if not methods:
        raise ConfigError("no methods to run")
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ConfigError("method labels must be distinct", labels=labels)
    if mode is NormCLMode.CONSTANT and norm_cl is None:
        raise ConfigError("norm_cl_mode=constant needs a norm_cl value")

    logger.info(
        "running %s: %d replicates x %d methods on %d threads",
        spec.label,
        replicates,
        len(methods),
        settings.threads,
    )

    def one(r: int) -> list[ReplicateRecord]:
        return run_replicate(spec, methods, seed, r, level, mode, norm_cl, settings)

    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        per_replicate = list(pool.map(one, range(replicates)))

    records = [rec for batch in per_replicate for rec in batch]
    metrics = []
    for label in labels:
        row = aggregate(spec.label, label, [rec for rec in records if rec.method == label])
        if row.flagged:
            logger.warning(
                "%s / %s: %d of %d replicates failed", row.cell, label, row.n_failed, replicates
            )
        metrics.append(row)
    return ReplicationResult(
        spec=spec, seed=seed, replicates=replicates, metrics=metrics, records=records
    )


def highdim_methods(cv_target: float = HIGHDIM_CV) -> list[MethodConfig]:
    """Ridge-penalized ATT weights with no, lasso and ridge outcome adjustment."""
    return [
        MethodConfig(
            name=name, fitter=FitterKind.L2, estimand="att", cv_target=cv_target, outcome_model=kind
        )
        for name, kind in (
            ("IPW", None),
            ("AIPW-L", OutcomeModelKind.LASSO),
            ("AIPW-R", OutcomeModelKind.RIDGE),
        )
    ]


def kernel_methods(
    kernels: list[Kernel], cv_target: float, estimand: str = "ate", augment: bool = False
) -> list[MethodConfig]:
    """RKHS fits stopped at a weight CV, one per kernel, optionally with kernel AIPW."""
    methods = []
    for kernel in kernels:
        methods.append(
            MethodConfig(
                name=f"{kernel}/ipw",
                fitter=FitterKind.RKHS,
                estimand=estimand,
                kernel=kernel,
                cv_target=cv_target,
            )
        )
        if augment:
            methods.append(
                MethodConfig(
                    name=f"{kernel}/aipw",
                    fitter=FitterKind.RKHS,
                    estimand=estimand,
                    kernel=kernel,
                    cv_target=cv_target,
                    outcome_model=OutcomeModelKind.KERNEL,
                )
            )
    return methods


def metrics_frame(results: list[ReplicationResult]) -> pd.DataFrame:
    """One row per cell and method."""
    return pd.DataFrame([row.model_dump() for res in results for row in res.metrics])


def write_metrics_csv(results: list[ReplicationResult], path: str | Path) -> None:
    """Write the metrics table as CSV."""
    metrics_frame(results).to_csv(Path(path), index=False, float_format="%.17g", encoding="utf-8")


def write_metrics_json(results: list[ReplicationResult], path: str | Path) -> None:
    """Write metrics, cell definitions and replicate records as JSON."""
    payload = [
        {
            "spec": res.spec.model_dump(mode="json"),
            "seed": res.seed,
            "replicates": res.replicates,
            "metrics": [row.model_dump(mode="json") for row in res.metrics],
            "records": [asdict(rec) for rec in res.records],
        }
        for res in results
    ]
    with open(Path(path), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
