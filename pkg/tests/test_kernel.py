import numpy as np
import pytest

from cbsr.core.errors import DomainError
from cbsr.enums.kernel_kind import KernelKind
from cbsr.fitting.glm import fit_mle_score
from cbsr.fitting.kernel import (
    Kernel,
    att_dual_objective,
    fit_rkhs,
    fit_rkhs_until_cv,
    gram,
    rkhs_max_bias,
    rkhs_norm,
)
from cbsr.models.dataset import Dataset
from cbsr.models.feature_map import design_from_array
from cbsr.scoring.rules import ScoringRule, score_grad

ATT = ScoringRule.parse("att")
GAUSSIAN = Kernel(kind=KernelKind.GAUSSIAN, sigma=0.5)


@pytest.fixture
def small(make_instance):
    return make_instance(n=60, d=2, seed=4)


class TestGram:
    @pytest.mark.parametrize(
        "kernel",
        [
            Kernel(kind=KernelKind.GAUSSIAN, sigma=1.0),
            Kernel(kind=KernelKind.LAPLACE, sigma=0.1),
            Kernel(kind=KernelKind.POLYNOMIAL, degree=3),
            Kernel(kind=KernelKind.LINEAR),
        ],
    )
    def test_positive_semidefinite(self, kernel):
        x = np.random.default_rng(0).standard_normal((30, 3))
        k = gram(kernel, x)
        np.testing.assert_allclose(k, k.T)
        assert np.linalg.eigvalsh(k).min() >= -1e-8 * max(1.0, np.abs(k).max())

    def test_laplace_entries(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        k = gram(Kernel(kind=KernelKind.LAPLACE, sigma=0.1), x)
        np.testing.assert_allclose(k[0, 1], np.exp(-0.5))

    def test_rkhs_norm_of_kernel_section(self):
        x = np.random.default_rng(1).standard_normal((10, 2))
        k = gram(GAUSSIAN, x) + 1e-8 * np.eye(10)
        assert rkhs_norm(k, k[:, 0]) == pytest.approx(np.sqrt(k[0, 0]), rel=1e-6)


class TestFit:
    def test_stationarity(self, small, settings):
        lam = 0.05
        fit = fit_rkhs(small, small.t, GAUSSIAN, ATT, lam, settings=settings)
        u = score_grad(ATT, fit.fitted_f, small.t)

        assert fit.converged
        np.testing.assert_allclose(u / small.n, lam * fit.gamma, atol=1e-6)
        assert abs(u.mean()) <= 1e-8
        assert np.isfinite(fit.hnorm)

    def test_max_bias_certifies_functions_in_the_span(self, small, settings):
        fit = fit_rkhs(small, small.t, GAUSSIAN, ATT, 0.05, settings=settings)
        ws = fit.weight_set(small.t)
        raw = ws.signed(normalized=False) / small.n
        rng = np.random.default_rng(2)
        for _ in range(50):
            a = rng.standard_normal(small.n)
            g = fit.gram @ a / np.sqrt(a @ fit.gram @ a)
            assert abs(raw @ g) <= rkhs_max_bias(fit) + 1e-7
            assert abs(ws.signed() @ g) <= rkhs_max_bias(fit, normalized=True) + 1e-7

    def test_bound_shrinks_with_lambda(self, small, settings):
        bounds = [
            rkhs_max_bias(fit_rkhs(small, small.t, GAUSSIAN, ATT, lam, settings=settings))
            for lam in (1.0, 0.3, 0.1, 0.03)
        ]
        assert np.all(np.diff(bounds) <= 1e-8)

    def test_linear_kernel_reproduces_glm(self, make_instance, settings):
        ds = make_instance(n=100, d=3, seed=6)
        kfit = fit_rkhs(ds, ds.t, Kernel(kind=KernelKind.LINEAR), ATT, 1e-5, settings=settings)
        glm = fit_mle_score(design_from_array(ds.x), ds.t, ATT, settings=settings)
        np.testing.assert_allclose(
            kfit.weight_set(ds.t).normalized, glm.weight_set(ds.t).normalized, atol=1e-4
        )

    def test_duplicated_rows_give_same_function(self, make_instance, settings):
        ds = make_instance(n=40, d=2, seed=9)
        doubled = Dataset(x=np.vstack([ds.x, ds.x]), t=np.concatenate([ds.t, ds.t]))
        once = fit_rkhs(ds, ds.t, GAUSSIAN, ATT, 0.05, settings=settings)
        twice = fit_rkhs(doubled, doubled.t, GAUSSIAN, ATT, 0.05, settings=settings)
        np.testing.assert_allclose(twice.fitted_f[: ds.n], once.fitted_f, atol=1e-6)

    def test_predict_on_training_rows(self, small, settings):
        fit = fit_rkhs(small, small.t, GAUSSIAN, ATT, 0.1, settings=settings)
        # Training predictions use the jittered Gram matrix
        np.testing.assert_allclose(fit.predict(small.x), fit.fitted_f, atol=1e-6)

    def test_zero_lambda(self, small):
        with pytest.raises(DomainError):
            fit_rkhs(small, small.t, GAUSSIAN, ATT, 0.0)


class TestDual:
    def test_att_dual_value_equals_primal(self, make_instance, settings):
        ds = make_instance(n=20, d=2, seed=12)
        lam = 0.1
        fit = fit_rkhs(ds, ds.t, GAUSSIAN, ATT, lam, settings=settings)
        w_control = fit.weights(ds.t)[ds.t == 0]

        dual = att_dual_objective(w_control, ds.t, fit.gram, lam)
        assert dual == pytest.approx(fit.objective, abs=1e-8)

        # Any other feasible control weighting has a larger dual objective
        rng = np.random.default_rng(0)
        for _ in range(10):
            other = w_control * np.exp(0.1 * rng.standard_normal(w_control.size))
            other *= w_control.sum() / other.sum()
            assert att_dual_objective(other, ds.t, fit.gram, lam) >= dual - 1e-12


class TestCvSearch:
    def test_target_met(self, small, settings):
        search = fit_rkhs_until_cv(small, small.t, GAUSSIAN, ATT, 0.8, settings=settings)
        assert search.cv <= 0.8
        assert search.fit.lambda_ == pytest.approx(search.lambda_)
