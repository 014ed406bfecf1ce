"""Propensity fitter enumeration."""

from enum import Enum


class FitterKind(str, Enum):
    """Strategies for fitting the propensity model."""

    GLM = "glm"
    STEPWISE = "stepwise"
    L1 = "l1"
    L2 = "l2"
    RKHS = "rkhs"
    BOOST = "boost"
    ORACLE = "oracle"
