import numpy as np
import pytest
from pydantic import ValidationError

from cbsr.core.errors import ConfigError
from cbsr.enums.design import OutcomeModelKind
from cbsr.enums.estimand import Estimand
from cbsr.enums.fitter_kind import FitterKind
from cbsr.estimation.inference import sigma_hat
from cbsr.estimation.pipeline import MethodConfig, estimate_effect, estimate_sigma, fit_weights
from cbsr.fitting.boost import TreeEnsemble
from cbsr.fitting.kernel import Kernel
from cbsr.fitting.regularized import imbalance_bound
from cbsr.fitting.stepwise import StepwisePath
from cbsr.scoring.rules import ScoringRule, weight


class TestMethodConfig:
    def test_default_label(self):
        assert MethodConfig().label == "glm/att"
        assert MethodConfig(name="mine").label == "mine"

    def test_penalized_needs_one_tuning_option(self):
        with pytest.raises(ValidationError):
            MethodConfig(fitter=FitterKind.L2)
        with pytest.raises(ValidationError):
            MethodConfig(fitter=FitterKind.L1, lambda_=0.1, cv_target=0.5)

    def test_rkhs_needs_kernel(self):
        with pytest.raises(ValidationError):
            MethodConfig(fitter=FitterKind.RKHS, lambda_=0.1)

    @pytest.mark.parametrize("fitter", [FitterKind.L1, FitterKind.L2])
    def test_certified_fitters_keep_their_rule(self, fitter):
        with pytest.raises(ValidationError):
            MethodConfig(fitter=fitter, estimand="att", weight_estimand="ate", lambda_=0.1)
        method = MethodConfig(fitter=fitter, estimand="att", weight_estimand="att", lambda_=0.1)
        assert method.weight_rule == method.rule

    def test_unknown_estimand(self):
        with pytest.raises(ValidationError):
            MethodConfig(estimand="late")

    def test_rules(self):
        method = MethodConfig(estimand="att", weight_estimand="ate")
        assert method.rule.estimand is Estimand.ATT
        assert method.weight_rule.estimand is Estimand.ATE


class TestFitWeights:
    def test_glm_weights_balance(self, instance, settings):
        fitted = fit_weights(instance, MethodConfig(estimand="ate"), settings=settings)
        imbalance = fitted.weights.signed() @ instance.x
        np.testing.assert_allclose(imbalance, 0.0, atol=1e-8)
        assert fitted.bias_factor is None
        assert fitted.weights.provenance.fitter == "glm"

    def test_ridge_reports_bias_factor(self, instance, settings):
        method = MethodConfig(fitter=FitterKind.L2, lambda_=0.1)
        fitted = fit_weights(instance, method, settings=settings)
        assert fitted.lambda_ == 0.1
        assert fitted.bias_factor == pytest.approx(imbalance_bound(fitted.fit).normalized_max_bias)

    def test_rkhs_reports_bias_factor(self, instance, settings):
        method = MethodConfig(fitter=FitterKind.RKHS, kernel=Kernel(sigma=0.5), lambda_=0.1)
        fitted = fit_weights(instance, method, settings=settings)
        assert fitted.bias_factor > 0

    def test_stepwise_and_boost(self, instance, settings):
        stepwise = fit_weights(
            instance, MethodConfig(fitter=FitterKind.STEPWISE, k_max=2), settings=settings
        )
        assert isinstance(stepwise.fit, StepwisePath)
        boost = fit_weights(
            instance, MethodConfig(fitter=FitterKind.BOOST, n_trees=5), settings=settings
        )
        assert isinstance(boost.fit, TreeEnsemble)

    def test_oracle_uses_true_scores(self, instance):
        p = np.full(instance.n, 0.4)
        fitted = fit_weights(instance, MethodConfig(fitter=FitterKind.ORACLE), true_p=p)
        rule = ScoringRule.parse("att")
        np.testing.assert_allclose(fitted.weights.w, weight(rule, p, instance.t))

    def test_oracle_needs_true_scores(self, instance):
        with pytest.raises(ConfigError):
            fit_weights(instance, MethodConfig(fitter=FitterKind.ORACLE))


class TestEstimate:
    def test_plain_weighting(self, instance, settings):
        method = MethodConfig()
        fitted = fit_weights(instance, method, settings=settings)
        estimate, g0 = estimate_effect(instance, fitted, method)
        assert g0 is None
        assert estimate.tau_hat == pytest.approx(fitted.weights.signed() @ instance.y)
        assert estimate_sigma(instance, g0) == sigma_hat(instance)

    def test_augmented(self, instance, settings):
        method = MethodConfig(outcome_model=OutcomeModelKind.LINEAR)
        fitted = fit_weights(instance, method, settings=settings)
        estimate, g0 = estimate_effect(instance, fitted, method)
        assert estimate.method == "aipw_att"
        assert g0 is not None
        # the outcome is linear with zero effect
        assert abs(estimate.tau_hat) < 0.5

    def test_augmentation_needs_att_or_ate(self, instance, settings):
        method = MethodConfig(estimand="owate", outcome_model=OutcomeModelKind.LINEAR)
        fitted = fit_weights(instance, method, settings=settings)
        with pytest.raises(ConfigError):
            estimate_effect(instance, fitted, method)
