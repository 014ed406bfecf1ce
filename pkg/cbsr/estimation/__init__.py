"""Effect estimators, outcome regressions and confidence intervals."""
