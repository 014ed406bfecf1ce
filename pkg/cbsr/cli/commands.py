"""Subcommand implementations.

Every command takes a validated ``RunConfig``, writes its output and returns the
process exit code. Errors propagate to ``cbsr.cli.app.run``, which maps them to
exit codes.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from cbsr.balance.diagnostics import balance_report
from cbsr.balance.dual import solve_dual_ate, solve_dual_att
from cbsr.cli.config import RunConfig, parse_kernel
from cbsr.core.errors import ConfigError
from cbsr.enums.design import NormCLMode
from cbsr.enums.estimand import Estimand
from cbsr.enums.fitter_kind import FitterKind
from cbsr.estimation.inference import HonestCI, honest_ci, naive_ci, split_sample
from cbsr.estimation.pipeline import (
    FittedWeights,
    MethodConfig,
    design_for,
    estimate_effect,
    estimate_sigma,
    fit_weights,
    plugin_norm_cl,
)
from cbsr.fitting.boost import TreeEnsemble
from cbsr.fitting.glm import PropensityFit, balance_residual
from cbsr.fitting.kernel import KernelFit
from cbsr.fitting.stepwise import StepwisePath
from cbsr.models.dataset import Dataset, load_csv
from cbsr.models.feature_map import DesignMatrix
from cbsr.models.reports import DiagnoseReport, EstimateReport, FitReport
from cbsr.models.weights import WeightSet
from cbsr.simulate.replications import (
    STOP_LATE_CV,
    highdim_methods,
    kernel_methods,
    run_replications,
    write_metrics_csv,
    write_metrics_json,
)

logger = logging.getLogger(__name__)

_PRESET_KERNELS = (
    "laplace:0.1",
    "laplace:1",
    "polynomial:1",
    "polynomial:3",
    "gaussian:0.1",
    "gaussian:1",
)


def _load(config: RunConfig) -> Dataset:
    assert config.input is not None
    return load_csv(config.input, config.treatment_col, config.outcome_col)


def _emit(report: BaseModel, out: Path | None) -> None:
    text = report.model_dump_json(indent=2, by_alias=True)
    if out is None:
        sys.stdout.write(text + "\n")
        return
    out.write_text(text + "\n", encoding="utf-8")
    logger.info("wrote %s", out)


def _fit_summary(fitted: FittedWeights, dm: DesignMatrix, t: np.ndarray) -> dict[str, object]:
    fit = fitted.fit
    if isinstance(fit, StepwisePath):
        final = fit.final
        return {
            "converged": final.converged and not fit.stopped_early,
            "iterations": final.iterations,
            "objective": final.objective,
            "columns": fit.active_columns(),
            "coefficients": final.theta.tolist(),
        }
    if isinstance(fit, KernelFit):
        return {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "objective": fit.objective,
            "coefficients": [fit.b],
            "columns": ["(intercept)"],
            "hnorm": fit.hnorm,
        }
    if isinstance(fit, PropensityFit):
        return {
            "converged": fit.converged,
            "iterations": fit.iterations,
            "objective": fit.objective,
            "columns": list(fit.columns),
            "coefficients": fit.theta.tolist(),
            "max_abs_balance_residual": float(np.max(np.abs(balance_residual(fit, dm, t)))),
        }
    if isinstance(fit, TreeEnsemble):
        return {
            "converged": True,
            "iterations": fit.n_trees + fit.skipped,
            "objective": fit.objectives[-1],
            "n_trees": fit.n_trees,
            "skipped": fit.skipped,
        }
    return {"converged": True}


def fit_report(
    config: RunConfig, ds: Dataset, method: MethodConfig, fitted: FittedWeights, dm: DesignMatrix
) -> FitReport:
    """Assemble the report of a fit.

    Args:
        config: Run configuration, echoed into the report
        ds: Dataset the fit used
        method: Method configuration
        fitted: Fitted weights
        dm: Design of the fit

    Returns:
        The report
    """
    return FitReport.model_validate(
        {
            "fitter": method.fitter.value,
            "rule": method.rule,
            "estimand": method.rule.estimand.value,
            "lambda_": fitted.lambda_,
            "max_bias": fitted.bias_factor,
            "weight_cv": fitted.weights.cv(),
            "balance": balance_report(dm, fitted.weights),
            "config": config.echo(),
            **_fit_summary(fitted, dm, ds.t),
        }
    )


def cmd_fit(config: RunConfig) -> int:
    """Fit a propensity model and write its report."""
    ds = _load(config)
    method = config.method()
    dm = design_for(ds, method)
    fitted = fit_weights(ds, method, design=dm)
    _emit(fit_report(config, ds, method, fitted, dm), config.out)
    return 0


def cmd_weights(config: RunConfig) -> int:
    """Write per-unit weights as CSV."""
    ds = _load(config)
    method = config.method()
    fitted = fit_weights(ds, method)
    frame = pd.DataFrame(
        {
            "row": np.arange(1, ds.n + 1),
            config.treatment_col: ds.t,
            "w": fitted.weights.w,
            "normalized": fitted.weights.normalized,
        }
    )
    fit = fitted.fit
    if isinstance(fit, StepwisePath):
        fit = fit.final
    if isinstance(fit, PropensityFit | TreeEnsemble):
        frame.insert(2, "p", fit.fitted_p)
    target = config.out if config.out is not None else sys.stdout
    frame.to_csv(target, index=False, float_format="%.17g")
    return 0


def _dual_gap(
    ds: Dataset, dm: DesignMatrix, method: MethodConfig
) -> tuple[float | None, WeightSet | None]:
    estimand = method.rule.estimand
    if method.fitter is not FitterKind.GLM or not dm.intercept:
        return None, None
    if estimand is Estimand.ATT:
        solution = solve_dual_att(dm, ds.t)
    elif estimand is Estimand.ATE:
        solution = solve_dual_ate(dm, ds.t)
    else:
        return None, None
    return solution.gap, solution.weights


def cmd_diagnose(config: RunConfig) -> int:
    """Report balance before and after weighting.

    For unregularized ATT and ATE fits the dual solver is run as well; its
    primal-dual gap and the largest weight discrepancy are reported.
    """
    ds = _load(config)
    method = config.method()
    dm = design_for(ds, method)
    fitted = fit_weights(ds, method, design=dm)
    gap, dual_weights = _dual_gap(ds, dm, method)
    discrepancy = None
    if dual_weights is not None:
        discrepancy = float(np.max(np.abs(dual_weights.normalized - fitted.weights.normalized)))
    report = DiagnoseReport(
        unweighted=balance_report(dm, WeightSet.uniform(ds.t)),
        weighted=balance_report(dm, fitted.weights, dual_gap=gap),
        max_dual_weight_discrepancy=discrepancy,
        config=config.echo(),
    )
    _emit(report, config.out)
    return 0


def cmd_estimate(config: RunConfig) -> int:
    """Estimate the effect with naive and (when a norm limit is available) honest intervals.

    The norm limit is the constant ``--norm-cl``, or with ``--norm-cl-mode plugin`` the
    norm of a control outcome regression fitted on the estimation units.
    """
    ds = _load(config)
    method = config.method()
    outcome_data: Dataset | None = None
    est = ds
    if config.split is not None:
        first, second = split_sample(ds.n, config.split, config.seed)
        outcome_data, est = ds.subset(first), ds.subset(second)
        logger.info("outcome model on %d units, estimate on %d", first.size, second.size)

    dm = design_for(est, method)
    fitted = fit_weights(est, method, design=dm)
    estimate, g0_hat = estimate_effect(est, fitted, method, outcome_data, seed=config.seed)
    sigma = estimate_sigma(est, g0_hat)
    naive = naive_ci(estimate, sigma, config.level)

    mode = config.norm_cl_mode or NormCLMode.CONSTANT
    honest: HonestCI | None = None
    if config.norm_cl is not None or mode is NormCLMode.PLUGIN:
        if fitted.bias_factor is None:
            raise ConfigError(
                f"fitter {method.fitter.value} certifies no bias bound; "
                "honest intervals need l1, l2 or rkhs"
            )
        cl = config.norm_cl
        if mode is NormCLMode.PLUGIN:
            cl = plugin_norm_cl(est, method, fitted, dm, seed=config.seed)
            logger.info("plug-in norm limit %.4g", cl)
        assert cl is not None
        honest = honest_ci(estimate, fitted.bias_factor, cl, sigma, config.level, mode)

    report = EstimateReport(
        estimate=estimate.model_copy(update={"se_plugin": sigma * estimate.weight_norm}),
        sigma_hat=sigma,
        naive=naive,
        honest=honest,
        max_bias_factor=fitted.bias_factor,
        n_estimation=est.n,
        config=config.echo(),
    )
    _emit(report, config.out)
    return 0


def cmd_simulate(config: RunConfig) -> int:
    """Run a simulation cell and write its metrics CSV (and JSON next to it)."""
    spec = config.sim_spec()
    match config.preset:
        case "highdim":
            methods = highdim_methods(config.cv_target or 1.0)
        case "kernels":
            kernels = [parse_kernel(k) for k in _PRESET_KERNELS]
            methods = kernel_methods(
                kernels, config.cv_target or STOP_LATE_CV, config.estimand, augment=config.aipw
            )
        case _:
            methods = [config.method()]
    result = run_replications(
        spec,
        methods,
        config.replicates,
        config.seed,
        level=config.level,
        norm_cl_mode=config.norm_cl_mode or NormCLMode.ORACLE,
        norm_cl=config.norm_cl,
    )
    if config.out is None:
        sys.stdout.write(
            pd.DataFrame([m.model_dump() for m in result.metrics]).to_csv(index=False)
        )
        return 0
    write_metrics_csv([result], config.out)
    write_metrics_json([result], config.out.with_suffix(".json"))
    logger.info("wrote %s", config.out)
    return 0
