"""Outcome regressions used to augment weighting estimators."""

import logging

import numpy as np
from sklearn.kernel_ridge import KernelRidge
from sklearn.linear_model import LassoCV, LinearRegression, RidgeCV
from sklearn.model_selection import GridSearchCV

from cbsr.core.errors import DataError
from cbsr.core.types import FloatArray, OutcomeFunction
from cbsr.enums.design import OutcomeModelKind
from cbsr.fitting.kernel import Kernel, gram
from cbsr.models.dataset import Dataset

logger = logging.getLogger(__name__)

_RIDGE_ALPHAS = np.logspace(-4, 4, 33)
_KERNEL_ALPHAS = np.logspace(-4, 2, 13)
_MIN_ROWS = 5


class KernelOutcome:
    """Kernel least squares on a precomputed Gram matrix, tuned by cross-validation."""

    def __init__(self, kernel: Kernel) -> None:
        """Initialize the regression.

        Args:
            kernel: Kernel shared with the propensity fit
        """
        self.kernel = kernel
        self.x_train: FloatArray | None = None
        self.model: GridSearchCV | None = None

    def fit(self, x: FloatArray, y: FloatArray) -> "KernelOutcome":
        """Fit on training rows.

        Args:
            x: Covariates
            y: Outcomes

        Returns:
            The fitted regression
        """
        self.x_train = x
        search = GridSearchCV(KernelRidge(kernel="precomputed"), {"alpha": _KERNEL_ALPHAS}, cv=5)
        search.fit(gram(self.kernel, x), y)
        self.model = search
        logger.debug("kernel outcome model alpha=%.3g", search.best_params_["alpha"])
        return self

    def predict(self, x: FloatArray) -> FloatArray:
        """Predictions at new rows."""
        if self.model is None or self.x_train is None:
            raise DataError("kernel outcome model is not fitted")
        return np.asarray(self.model.predict(gram(self.kernel, x, self.x_train)))


def fit_outcome_model(
    x: FloatArray,
    y: FloatArray,
    kind: OutcomeModelKind | str,
    kernel: Kernel | None = None,
    seed: int | None = None,
) -> OutcomeFunction:
    """Fit an outcome regression and return it as a function of covariates.

    Args:
        x: Covariates
        y: Outcomes
        kind: linear, lasso, ridge or kernel
        kernel: Kernel for ``kind=kernel``
        seed: Seed of the cross-validation folds for the lasso

    Returns:
        A callable mapping a covariate matrix to predictions

    Raises:
        DataError: If there are too few rows to fit
    """
    kind = OutcomeModelKind(kind)
    if y.shape[0] < _MIN_ROWS:
        raise DataError(f"outcome regression needs at least {_MIN_ROWS} rows, got {y.shape[0]}")
    match kind:
        case OutcomeModelKind.LASSO:
            model = LassoCV(cv=5, random_state=seed, max_iter=10000).fit(x, y)
        case OutcomeModelKind.RIDGE:
            model = RidgeCV(alphas=_RIDGE_ALPHAS).fit(x, y)
        case OutcomeModelKind.KERNEL:
            model = KernelOutcome(kernel or Kernel()).fit(x, y)
        case _:
            model = LinearRegression().fit(x, y)

    def predict(new_x: FloatArray) -> FloatArray:
        return np.asarray(model.predict(np.asarray(new_x, dtype=np.float64)), dtype=np.float64)

    return predict


def fit_group_outcomes(
    ds: Dataset,
    kind: OutcomeModelKind | str,
    kernel: Kernel | None = None,
    seed: int | None = None,
) -> tuple[OutcomeFunction, OutcomeFunction]:
    """Fit separate regressions on the controls and on the treated.

    Args:
        ds: Dataset with outcomes
        kind: Regression kind
        kernel: Kernel for ``kind=kernel``
        seed: Seed of the cross-validation folds

    Returns:
        (g0_hat, g1_hat)
    """
    y = ds.require_outcome()
    control = ds.t == 0
    g0 = fit_outcome_model(ds.x[control], y[control], kind, kernel, seed)
    g1 = fit_outcome_model(ds.x[~control], y[~control], kind, kernel, seed)
    return g0, g1


def outcome_coefficients(
    x: FloatArray, y: FloatArray, kind: OutcomeModelKind | str, seed: int | None = None
) -> FloatArray:
    """Slope coefficients of a cross-validated linear outcome regression.

    Args:
        x: Covariates without an intercept column
        y: Outcomes
        kind: lasso, ridge or linear
        seed: Seed of the lasso's cross-validation folds

    Returns:
        The coefficient vector

    Raises:
        DataError: If there are too few rows, or the kind is not linear in x
    """
    kind = OutcomeModelKind(kind)
    if y.shape[0] < _MIN_ROWS:
        raise DataError(f"outcome regression needs at least {_MIN_ROWS} rows, got {y.shape[0]}")
    match kind:
        case OutcomeModelKind.LASSO:
            model = LassoCV(cv=5, random_state=seed, max_iter=10000).fit(x, y)
        case OutcomeModelKind.RIDGE:
            model = RidgeCV(alphas=_RIDGE_ALPHAS).fit(x, y)
        case OutcomeModelKind.LINEAR:
            model = LinearRegression().fit(x, y)
        case _:
            raise DataError("kernel outcome models have no coefficient vector")
    return np.asarray(model.coef_, dtype=np.float64)
