"""Dual solvers and covariate balance diagnostics."""
