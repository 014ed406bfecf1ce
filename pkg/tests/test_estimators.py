import numpy as np
import pytest

from cbsr.core.errors import DataError
from cbsr.enums.design import OutcomeModelKind
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.estimation.estimators import aipw_ate, aipw_att, bias_decompose, ipw_estimate
from cbsr.estimation.outcome import fit_group_outcomes, fit_outcome_model, outcome_coefficients
from cbsr.fitting.glm import fit_mle_score
from cbsr.fitting.regularized import fit_penalized, imbalance_bound
from cbsr.models.dataset import Dataset
from cbsr.models.feature_map import design_from_array
from cbsr.models.weights import WeightSet
from cbsr.scoring.rules import ScoringRule

BETA = np.array([1.0, -2.0, 0.5])


def _zero(x):
    return np.zeros(x.shape[0])


def _with_outcome(ds: Dataset, y) -> Dataset:
    return Dataset(x=ds.x, t=ds.t, y=y, columns=ds.columns)


def _fitted_weights(ds: Dataset, estimand: str, settings) -> WeightSet:
    rule = ScoringRule.parse(estimand)
    fit = fit_mle_score(design_from_array(ds.x), ds.t, rule, settings=settings)
    return fit.weight_set(ds.t)


class TestIPW:
    @pytest.mark.parametrize("estimand", ["att", "ate", "atc", "owate"])
    def test_sharp_null_in_balanced_span(self, instance, settings, estimand):
        ds = _with_outcome(instance, 2.0 + instance.x @ BETA)
        ws = _fitted_weights(ds, estimand, settings)
        assert ipw_estimate(ds, ws).tau_hat == pytest.approx(0.0, abs=1e-8)

    def test_constant_effect_recovered_exactly(self, instance, settings):
        ds = _with_outcome(instance, instance.x @ BETA + 1.5 * instance.t)
        ws = _fitted_weights(ds, "att", settings)
        assert ipw_estimate(ds, ws).tau_hat == pytest.approx(1.5, abs=1e-8)

    @pytest.mark.parametrize("estimand", ["att", "ate", "owate"])
    def test_constant_shift_leaves_estimate_unchanged(self, instance, settings, estimand):
        ws = _fitted_weights(instance, estimand, settings)
        shifted = _with_outcome(instance, instance.y + 7.25)
        assert ipw_estimate(shifted, ws).tau_hat == pytest.approx(
            ipw_estimate(instance, ws).tau_hat, abs=1e-10
        )

    def test_unnormalized_uses_raw_weights(self, instance):
        ws = WeightSet.uniform(instance.t)
        est = ipw_estimate(instance, ws, normalized=False)
        assert est.tau_hat == pytest.approx(ws.signed(normalized=False) @ instance.y)
        assert est.weight_norm == pytest.approx(np.sqrt(instance.n))
        assert not est.normalized

    def test_weight_norm_of_normalized_weights(self, instance):
        ws = WeightSet.uniform(instance.t)
        expected = np.sqrt(1 / instance.n_treated + 1 / instance.n_control)
        assert ipw_estimate(instance, ws).weight_norm == pytest.approx(expected)

    def test_outcome_required(self, instance):
        ds = Dataset(x=instance.x, t=instance.t)
        with pytest.raises(DataError):
            ipw_estimate(ds, WeightSet.uniform(ds.t))

    def test_outcome_vector_accepted(self, instance):
        ws = WeightSet.uniform(instance.t)
        assert ipw_estimate(instance.y, ws).tau_hat == ipw_estimate(instance, ws).tau_hat


class TestAugmented:
    def test_zero_regression_equals_ipw(self, instance, settings):
        ws = _fitted_weights(instance, "att", settings)
        ipw = ipw_estimate(instance, ws).tau_hat
        assert aipw_att(instance, ws, _zero).tau_hat == ipw
        assert aipw_ate(instance, ws, _zero, _zero).tau_hat == ipw

    def test_att_with_true_regression(self, instance, settings):
        def g0(x):
            return np.sin(x[:, 0]) + x[:, 1] ** 2

        ds = _with_outcome(instance, g0(instance.x) + 0.7 * instance.t)
        ws = _fitted_weights(ds, "att", settings)
        est = aipw_att(ds, ws, g0)
        assert est.tau_hat == pytest.approx(0.7, abs=1e-10)
        assert est.method == "aipw_att"

    def test_ate_with_true_regressions(self, instance, settings):
        def g0(x):
            return np.cos(x[:, 2]) - x[:, 0]

        def g1(x):
            return g0(x) - 0.3

        ds = _with_outcome(instance, np.where(instance.t == 1, g1(instance.x), g0(instance.x)))
        ws = _fitted_weights(ds, "ate", settings)
        assert aipw_ate(ds, ws, g0, g1).tau_hat == pytest.approx(-0.3, abs=1e-10)


class TestBiasDecomposition:
    def test_parts_sum_to_error(self, instance):
        def g0(x):
            return x @ BETA

        ws = WeightSet.uniform(instance.t)
        ds = _with_outcome(instance, g0(instance.x) + 0.5 * instance.t + instance.y)
        parts = bias_decompose(ds, ws, g0, tau=0.5)
        assert parts.bias + parts.noise == pytest.approx(parts.error, abs=1e-12)
        assert parts.bias == pytest.approx(ws.signed() @ g0(instance.x))

    def test_ridge_bias_within_certified_bound(self, instance, settings):
        dm = design_from_array(instance.x)
        fit = fit_penalized(
            dm, instance.t, ScoringRule.parse("att"), 0.05, PenaltyNorm.L2, settings=settings
        )
        bound = imbalance_bound(fit).normalized_max_bias
        rng = np.random.default_rng(8)
        for _ in range(20):
            beta = rng.standard_normal(instance.d)
            beta /= np.linalg.norm(beta)
            parts = bias_decompose(instance, fit.weight_set(instance.t), lambda x: x @ beta)
            assert abs(parts.bias) <= bound + 1e-8


class TestOutcomeModels:
    def test_linear_regression_recovers_linear_outcome(self, instance):
        y = 1.0 + instance.x @ BETA
        g = fit_outcome_model(instance.x, y, OutcomeModelKind.LINEAR)
        np.testing.assert_allclose(g(instance.x), y, atol=1e-8)
        np.testing.assert_allclose(
            outcome_coefficients(instance.x, y, "linear"), BETA, atol=1e-8
        )

    def test_group_regressions(self, instance):
        ds = _with_outcome(instance, instance.x @ BETA + 2.0 * instance.t)
        g0, g1 = fit_group_outcomes(ds, "ridge")
        np.testing.assert_allclose(g1(ds.x) - g0(ds.x), 2.0, atol=0.1)

    def test_too_few_rows(self, instance):
        with pytest.raises(DataError):
            fit_outcome_model(instance.x[:4], instance.y[:4], "linear")

    def test_kernel_regression_has_no_coefficients(self, instance):
        with pytest.raises(DataError):
            outcome_coefficients(instance.x, instance.y, "kernel")
