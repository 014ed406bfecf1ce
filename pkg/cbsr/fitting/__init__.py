"""Propensity model fitters: GLM, stepwise, penalized, kernel and boosted."""
