"""Simulation enumerations."""

from enum import Enum


class SimDesign(str, Enum):
    """Simulation designs."""

    KANG_SCHAFER = "kang_schafer"
    GP_LOWDIM = "gp_lowdim"
    HIGHDIM = "highdim"


class NormCLMode(str, Enum):
    """Source of the confidence limit for the outcome function norm."""

    ORACLE = "oracle"
    CONSTANT = "constant"
    PLUGIN = "plugin"


class OutcomeModelKind(str, Enum):
    """Outcome regressions used for augmentation."""

    LINEAR = "linear"
    LASSO = "lasso"
    RIDGE = "ridge"
    KERNEL = "kernel"
