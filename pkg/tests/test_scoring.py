import numpy as np
import pytest

from cbsr.core.errors import DomainError
from cbsr.enums.estimand import Estimand
from cbsr.scoring import rules
from cbsr.scoring.link import EPS, link, link_inv
from cbsr.scoring.rules import (
    ScoringRule,
    score_grad,
    score_hess,
    score_objective,
    score_value,
    weight,
)

NAMED = [Estimand.ATE, Estimand.ATC, Estimand.ATT, Estimand.OWATE]
F_GRID = np.linspace(-6.0, 6.0, 25)
LATTICE = np.round(np.linspace(-1.0, 1.0, 11), 10)
CONCAVE_LATTICE = np.round(np.linspace(-1.0, 0.0, 11), 10)


class TestLink:
    def test_round_trip(self):
        p = np.linspace(0.001, 0.999, 101)
        np.testing.assert_allclose(link_inv(link(p)), p, atol=1e-12)

    def test_saturation_is_clamped(self):
        out = link_inv(np.array([-1000.0, 1000.0]))
        assert out[0] == EPS
        assert out[1] == 1.0 - EPS

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_link_rejects_boundary(self, p):
        with pytest.raises(DomainError):
            link(p)


class TestScoringRule:
    def test_named_pairs(self):
        assert ScoringRule.parse("att").estimand is Estimand.ATT
        assert (ScoringRule.parse("ATE").alpha, ScoringRule.parse("ATE").beta) == (-1.0, -1.0)
        assert ScoringRule.parse("owate").estimand is Estimand.OWATE

    def test_custom(self):
        rule = ScoringRule.parse("custom:-0.5,-0.25")
        assert (rule.alpha, rule.beta) == (-0.5, -0.25)
        assert rule.estimand is Estimand.CUSTOM
        assert rule.is_concave

    def test_custom_matching_named_pair_is_named(self):
        assert ScoringRule.parse("custom:0,-1").estimand is Estimand.ATT

    @pytest.mark.parametrize("text", ["foo", "custom:2,0", "custom:1", "custom:a,b"])
    def test_invalid(self, text):
        with pytest.raises(DomainError):
            ScoringRule.parse(text)

    def test_reflection_swaps_att_and_atc(self):
        assert ScoringRule.parse("att").reflected().estimand is Estimand.ATC

    def test_concavity_range(self):
        assert not ScoringRule(alpha=0.5, beta=0.0).is_concave
        assert not ScoringRule(alpha=-1.0, beta=0.25).is_concave


class TestWeights:
    def test_ate_is_inverse_probability(self):
        p = np.array([0.2, 0.5, 0.9])
        rule = ScoringRule.for_estimand(Estimand.ATE)
        np.testing.assert_allclose(weight(rule, p, 1), 1.0 / p)
        np.testing.assert_allclose(weight(rule, p, 0), 1.0 / (1.0 - p))

    def test_att_weights_treated_by_one_and_controls_by_odds(self):
        p = np.array([0.2, 0.5, 0.9])
        rule = ScoringRule.for_estimand(Estimand.ATT)
        np.testing.assert_allclose(weight(rule, p, 1), 1.0)
        np.testing.assert_allclose(weight(rule, p, 0), p / (1.0 - p))

    def test_overlap_weights(self):
        p = np.array([0.2, 0.5, 0.9])
        rule = ScoringRule.for_estimand(Estimand.OWATE)
        np.testing.assert_allclose(weight(rule, p, 1), 1.0 - p)
        np.testing.assert_allclose(weight(rule, p, 0), p)

    def test_ate_weights_at_least_one(self):
        p = np.linspace(0.01, 0.99, 50)
        rule = ScoringRule.for_estimand(Estimand.ATE)
        assert np.all(weight(rule, p, 1) >= 1.0)
        assert np.all(weight(rule, p, 0) >= 1.0)

    def test_probability_outside_unit_interval(self):
        with pytest.raises(DomainError):
            weight(ScoringRule.parse("ate"), np.array([0.0, 0.5]), np.array([1, 0]))


class TestDerivatives:
    @pytest.mark.parametrize("estimand", NAMED)
    @pytest.mark.parametrize("t", [0, 1])
    def test_hessian_matches_finite_differences(self, estimand, t):
        rule = ScoringRule.for_estimand(estimand)
        h = 1e-5
        fd = (score_grad(rule, F_GRID + h, t) - score_grad(rule, F_GRID - h, t)) / (2 * h)
        np.testing.assert_allclose(score_hess(rule, F_GRID, t), fd, rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("estimand", NAMED)
    @pytest.mark.parametrize("t", [0, 1])
    def test_objective_derivative_is_signed_weight(self, estimand, t):
        rule = ScoringRule.for_estimand(estimand)
        h = 1e-5
        fd = (score_objective(rule, F_GRID + h, t) - score_objective(rule, F_GRID - h, t)) / (
            2 * h
        )
        np.testing.assert_allclose(fd, score_grad(rule, F_GRID, t), rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("alpha", CONCAVE_LATTICE)
    @pytest.mark.parametrize("beta", CONCAVE_LATTICE)
    def test_concave_on_lattice(self, alpha, beta):
        rule = ScoringRule(alpha=alpha, beta=beta)
        for t in (0, 1):
            assert np.all(score_hess(rule, F_GRID, t) <= 0.0)

    @pytest.mark.parametrize("alpha", LATTICE)
    @pytest.mark.parametrize("beta", LATTICE)
    def test_hessian_matches_finite_differences_on_lattice(self, alpha, beta):
        rule = ScoringRule(alpha=alpha, beta=beta)
        h = 1e-5
        for t in (0, 1):
            fd = (score_grad(rule, F_GRID + h, t) - score_grad(rule, F_GRID - h, t)) / (2 * h)
            np.testing.assert_allclose(score_hess(rule, F_GRID, t), fd, rtol=1e-6, atol=1e-6)

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
    @pytest.mark.parametrize("beta", [-1.0, -0.5, 0.0])
    def test_positive_exponent_bends_treated_branch_upward(self, alpha, beta):
        rule = ScoringRule(alpha=alpha, beta=beta)
        assert score_hess(rule, np.array([-6.0]), 1)[0] > 0.0
        assert score_hess(rule.reflected(), np.array([6.0]), 0)[0] > 0.0

    @pytest.mark.parametrize("alpha", LATTICE)
    @pytest.mark.parametrize("beta", LATTICE)
    def test_reflection_symmetry(self, alpha, beta):
        rule = ScoringRule(alpha=alpha, beta=beta)
        np.testing.assert_allclose(
            score_grad(rule, F_GRID, 1),
            -score_grad(rule.reflected(), -F_GRID, 0),
            rtol=1e-10,
        )


class TestQuadrature:
    @pytest.mark.parametrize("estimand", NAMED)
    @pytest.mark.parametrize("t", [0, 1])
    def test_integrated_gradient_matches_closed_form(self, estimand, t):
        rule = ScoringRule.for_estimand(estimand)
        tt = np.full(F_GRID.shape, t)
        closed = score_objective(rule, F_GRID, tt) - score_objective(rule, np.zeros(1), t)
        quadrature = rules._integrated_grad(rule, F_GRID, tt)
        np.testing.assert_allclose(quadrature, closed, rtol=1e-8, atol=1e-8)

    def test_custom_value_agrees_with_linear_predictor_scale(self):
        rule = ScoringRule(alpha=-0.5, beta=-0.5)
        p = np.array([0.2, 0.5, 0.8])
        for t in (0, 1):
            np.testing.assert_allclose(
                score_value(rule, p, t), score_objective(rule, link(p), t), atol=1e-8
            )

    def test_custom_score_vanishes_at_one_half(self):
        rule = ScoringRule(alpha=-0.3, beta=-0.7)
        np.testing.assert_allclose(score_objective(rule, np.zeros(2), np.array([0, 1])), 0.0)
