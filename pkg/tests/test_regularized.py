import numpy as np
import pytest
from scipy.optimize import minimize

from cbsr.core.config import SolverSettings
from cbsr.core.errors import DomainError
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.fitting.glm import ScoreProblem, fit_mle_score
from cbsr.fitting.newton import NewtonStatus
from cbsr.fitting.regularized import (
    _prox_gradient,
    fit_penalized,
    fit_until_cv,
    imbalance_bound,
    lambda_path,
)
from cbsr.models.feature_map import design_from_array
from cbsr.scoring.rules import ScoringRule

ATT = ScoringRule.parse("att")


@pytest.fixture
def design(make_instance):
    ds = make_instance(n=200, d=5, seed=3)
    return design_from_array(ds.x), ds.t


class TestRidge:
    @pytest.mark.parametrize("seed", range(5))
    def test_kkt_and_coordinatewise_equality(self, make_instance, settings, seed):
        ds = make_instance(n=200, d=4, seed=seed)
        fit = fit_penalized(design_from_array(ds.x), ds.t, ATT, 0.05, "l2", settings=settings)
        bound = imbalance_bound(fit)

        assert fit.kkt_residual() <= 1e-8
        assert bound.satisfied(atol=1e-8)
        pen = fit.penalized > 0
        np.testing.assert_allclose(
            np.abs(bound.imbalance[pen]), bound.bound[pen], atol=1e-6
        )

    def test_intercept_is_unpenalized_and_balanced(self, design, settings):
        dm, t = design
        fit = fit_penalized(dm, t, ATT, 0.1, "l2", settings=settings)
        assert abs(fit.imbalance[0]) <= 1e-10
        s0, s1 = fit.weight_sums
        assert s0 == pytest.approx(s1, rel=1e-9)

    def test_matches_derivative_free_maximization(self, make_instance, settings):
        ds = make_instance(n=30, d=3, seed=11)
        dm = design_from_array(ds.x)
        lam = 0.1
        fit = fit_penalized(dm, ds.t, ATT, lam, "l2", settings=settings)
        problem = ScoreProblem(dm.values, ds.t, ATT)

        def negative(th):
            return -(problem.value(th) - 0.5 * lam * float(np.sum(th[1:] ** 2)))

        oracle = minimize(
            negative,
            np.zeros(dm.m),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 40000, "maxfev": 40000},
        )
        np.testing.assert_allclose(fit.theta, oracle.x, atol=1e-4)

    def test_zero_penalty_is_the_unregularized_fit(self, design, settings):
        dm, t = design
        reg = fit_penalized(dm, t, ATT, 0.0, "l2", settings=settings)
        mle = fit_mle_score(dm, t, ATT, settings=settings)
        np.testing.assert_allclose(reg.theta, mle.theta, atol=1e-8)

    def test_huge_penalty_gives_uniform_weights(self, design, settings):
        dm, t = design
        fit = fit_penalized(dm, t, ATT, 1e7, "l2", settings=settings)
        assert np.max(np.abs(fit.theta[1:])) <= 1e-6
        assert fit.weight_set(t).cv() <= 1e-5

    def test_negative_penalty(self, design):
        dm, t = design
        with pytest.raises(DomainError):
            fit_penalized(dm, t, ATT, -1.0)


class TestLasso:
    def test_imbalance_bounded_by_lambda(self, design, settings):
        dm, t = design
        lam = 0.02
        fit = fit_penalized(dm, t, ATT, lam, "l1", settings=settings)
        pen = fit.penalized > 0

        assert np.all(np.abs(fit.imbalance[pen]) <= lam + 1e-8)
        assert abs(fit.imbalance[0]) <= 1e-8
        assert imbalance_bound(fit).aggregate == lam

    def test_large_penalty_zeroes_coefficients(self, design, settings):
        dm, t = design
        fit = fit_penalized(dm, t, ATT, 10.0, "l1", settings=settings)
        assert np.all(fit.theta[1:] == 0.0)

    def test_exhausted_backtracking_keeps_iterate(self, design):
        dm, t = design

        class RejectingProblem(ScoreProblem):
            def value(self, theta):
                return super().value(theta) if not np.any(theta) else -np.inf

        problem = RejectingProblem(dm.values, t, ATT)
        pen = np.ones(dm.m)
        pen[0] = 0.0
        start = np.zeros(dm.m)
        theta, iterations, status = _prox_gradient(
            problem, 0.001, pen, start, np.ones(dm.m), SolverSettings(max_halvings=3), 100
        )

        assert status is NewtonStatus.STALLED
        assert iterations == 1
        np.testing.assert_array_equal(theta, start)


class TestBiasBound:
    def test_random_unit_outcomes_are_certified(self, design, settings):
        dm, t = design
        fit = fit_penalized(dm, t, ATT, 0.05, "l2", settings=settings)
        bound = imbalance_bound(fit).normalized_max_bias
        signed = fit.weight_set(t).signed()
        rng = np.random.default_rng(0)
        for _ in range(100):
            beta = rng.standard_normal(dm.m - 1)
            beta /= np.linalg.norm(beta)
            assert abs(signed @ (dm.values[:, 1:] @ beta)) <= bound + 1e-8

    def test_max_bias_grows_with_lambda(self, design, settings):
        dm, t = design
        path = lambda_path(dm, t, ATT, np.logspace(-3, 0, 10), "l2", settings=settings)
        bias = np.array([pt.max_bias for pt in path])
        assert np.all(np.diff(bias) >= -1e-10)
        cvs = np.array([pt.cv for pt in path])
        assert cvs[0] >= cvs[-1]

    def test_warm_path_matches_cold_fits(self, design, settings):
        dm, t = design
        grid = np.logspace(-2, 0, 5)
        warm = lambda_path(dm, t, ATT, grid, "l2", settings=settings)
        cold = lambda_path(dm, t, ATT, grid, "l2", settings=settings, warm_start=False)
        for a, b in zip(warm, cold, strict=True):
            np.testing.assert_allclose(a.fit.theta, b.fit.theta, atol=1e-8)

    def test_unsorted_grid(self, design):
        dm, t = design
        with pytest.raises(DomainError):
            lambda_path(dm, t, ATT, [1.0, 0.1])


class TestCvSearch:
    @pytest.mark.parametrize("norm", [PenaltyNorm.L1, PenaltyNorm.L2])
    def test_selected_fit_meets_target(self, design, settings, norm):
        dm, t = design
        search = fit_until_cv(dm, t, ATT, 0.5, norm, settings=settings)
        assert search.cv <= 0.5
        assert search.fit.weight_set(t).cv() == pytest.approx(search.cv)
        assert search.lambda_ == pytest.approx(search.fit.lambda_)
