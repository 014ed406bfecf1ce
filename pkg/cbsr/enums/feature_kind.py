"""Feature map enumeration."""

from enum import Enum


class FeatureKind(str, Enum):
    """Feature expansions of the covariate matrix."""

    RAW = "raw"
    RAW_INTERCEPT = "raw+intercept"
    POLYNOMIAL = "polynomial"
    STANDARDIZED = "standardized"
