"""Argument parsing and exit code mapping for the ``cbsr`` command."""

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from enum import Enum
from typing import Any

from pydantic import ValidationError

from cbsr import __version__
from cbsr.cli import commands
from cbsr.cli.config import RunConfig
from cbsr.core.errors import CBSRError, ConfigError, DataError, NumericalError
from cbsr.enums.design import NormCLMode, OutcomeModelKind, SimDesign
from cbsr.enums.feature_kind import FeatureKind
from cbsr.enums.fitter_kind import FitterKind
from cbsr.enums.kernel_kind import KernelKind
from cbsr.enums.penalty_norm import PenaltyNorm

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "fit": commands.cmd_fit,
    "weights": commands.cmd_weights,
    "estimate": commands.cmd_estimate,
    "diagnose": commands.cmd_diagnose,
    "simulate": commands.cmd_simulate,
}

# Flags that are not RunConfig fields
_META = {"config", "verbose", "quiet"}


def _values(enum: type[Enum]) -> list[str]:
    return [member.value for member in enum]


def _data_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = parent.add_argument_group("data")
    group.add_argument("--input", help="CSV file with a header row")
    group.add_argument("--treatment-col", dest="treatment_col", help="0/1 treatment column")
    group.add_argument("--outcome-col", dest="outcome_col", help="outcome column")
    group.add_argument(
        "--features", choices=_values(FeatureKind), help="design built from the covariates"
    )
    group.add_argument("--feature-degree", dest="feature_degree", type=int)
    return parent


def _fit_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = parent.add_argument_group("propensity fit")
    group.add_argument("--estimand", help="ate, att, atc, owate or custom:a,b (default att)")
    group.add_argument("--fitter", choices=_values(FitterKind))
    group.add_argument("--lambda", dest="lambda", type=float, help="penalty level")
    group.add_argument("--norm", choices=_values(PenaltyNorm))
    group.add_argument("--kernel", choices=_values(KernelKind))
    group.add_argument("--sigma", type=float, help="inverse bandwidth of gaussian/laplace")
    group.add_argument("--degree", type=int, help="polynomial kernel degree")
    group.add_argument("--nu", type=float, help="boosting shrinkage")
    group.add_argument("--depth", type=int, help="boosting tree depth")
    group.add_argument("--trees", type=int, help="boosting iterations")
    group.add_argument("--cv-target", dest="cv_target", type=float)
    group.add_argument("--k-max", dest="k_max", type=int, help="stepwise columns to add")
    group.add_argument("--seed", type=int)
    group.add_argument("--out", help="output file (stdout when omitted)")
    return parent


def _inference_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = parent.add_argument_group("estimation")
    group.add_argument("--aipw", action="store_true", help="augment with an outcome regression")
    group.add_argument(
        "--outcome-model", dest="outcome_model", choices=_values(OutcomeModelKind)
    )
    group.add_argument("--split", type=float, help="share of units for the outcome regression")
    group.add_argument("--level", type=float, help="coverage level (default 0.95)")
    group.add_argument("--norm-cl", dest="norm_cl", type=float, help="outcome norm limit")
    group.add_argument(
        "--norm-cl-mode", dest="norm_cl_mode", choices=_values(NormCLMode)
    )
    return parent


def _simulation_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    group = parent.add_argument_group("simulation")
    group.add_argument("--design", choices=_values(SimDesign))
    group.add_argument("--n", type=int)
    group.add_argument("--d", type=int)
    group.add_argument("--rho", type=float)
    group.add_argument("--s-t", dest="s_t", type=int)
    group.add_argument("--s-y", dest="s_y", type=int)
    group.add_argument("--noise", type=float, help="outcome noise SD")
    group.add_argument("--f-kernel", dest="f_kernel", help="e.g. polynomial:1")
    group.add_argument("--g-kernel", dest="g_kernel", help="e.g. laplace:0.1")
    group.add_argument("--replicates", type=int)
    group.add_argument("--preset", choices=["highdim", "kernels"])
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Build the ``cbsr`` argument parser.

    Returns:
        The parser, one subcommand per operation
    """
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON configuration echoed by an earlier run")
    common.add_argument("-v", "--verbose", action="store_true", default=False)
    common.add_argument("-q", "--quiet", action="store_true", default=False)

    parser = argparse.ArgumentParser(
        prog="cbsr",
        description="Propensity scores fitted with covariate balancing scoring rules",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    data, fit = _data_options(), _fit_options()
    sub.add_parser("fit", parents=[common, data, fit], help="fit a propensity model")
    sub.add_parser("weights", parents=[common, data, fit], help="write balancing weights")
    sub.add_parser(
        "estimate",
        parents=[common, data, fit, _inference_options()],
        help="estimate the effect with naive and honest intervals",
    )
    sub.add_parser("diagnose", parents=[common, data, fit], help="report covariate balance")
    sub.add_parser(
        "simulate",
        parents=[common, fit, _inference_options(), _simulation_options()],
        help="run a simulation cell",
    )
    return parser


def parse_config(argv: Sequence[str] | None = None) -> tuple[RunConfig, argparse.Namespace]:
    """Parse arguments into a validated configuration.

    Flags override the values of ``--config``.

    Args:
        argv: Arguments without the program name, ``sys.argv[1:]`` by default

    Returns:
        The configuration and the raw namespace

    Raises:
        ValidationError: If the configuration is invalid
    """
    namespace = build_parser().parse_args(argv)
    values: dict[str, Any] = {k: v for k, v in vars(namespace).items() if k not in _META}
    config_path = getattr(namespace, "config", None)
    if config_path:
        return RunConfig.from_json(config_path, **values), namespace
    return RunConfig.model_validate(values), namespace


def _report_error(error: dict[str, Any], code: int) -> int:
    sys.stderr.write(json.dumps({**error, "exit_code": code}) + "\n")
    return code


def run(argv: Sequence[str] | None = None) -> int:
    """Run one command and map failures to exit codes.

    Configuration errors exit with 2, input/output errors with 3 and numerical
    failures with 4. Failures are written to stderr as one line of JSON.

    Args:
        argv: Arguments without the program name

    Returns:
        The exit code
    """
    try:
        config, namespace = parse_config(argv)
    except ValidationError as e:
        return _report_error({"error": "ConfigError", "message": str(e)}, EXIT_CONFIG)
    except CBSRError as e:
        return _report_error(e.to_dict(), EXIT_CONFIG)
    except OSError as e:
        return _report_error({"error": type(e).__name__, "message": str(e)}, EXIT_IO)

    if namespace.verbose:
        logging.getLogger("cbsr").setLevel(logging.DEBUG)
    elif namespace.quiet:
        logging.getLogger("cbsr").setLevel(logging.WARNING)

    logger.debug("resolved configuration: %s", config.echo())
    try:
        return _COMMANDS[config.command](config)
    except ValidationError as e:
        return _report_error({"error": "ConfigError", "message": str(e)}, EXIT_CONFIG)
    except ConfigError as e:
        return _report_error(e.to_dict(), EXIT_CONFIG)
    except DataError as e:
        return _report_error(e.to_dict(), EXIT_IO)
    except OSError as e:
        return _report_error({"error": type(e).__name__, "message": str(e)}, EXIT_IO)
    except NumericalError as e:
        return _report_error(e.to_dict(), EXIT_NUMERIC)
    except CBSRError as e:
        return _report_error(e.to_dict(), EXIT_CONFIG)
