"""Covariate balancing scoring rules for propensity score weighting."""

__version__ = "1.0.0"

__all__ = ["__version__"]
