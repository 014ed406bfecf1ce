"""Scoring rules, logistic link and induced balancing weights."""

from cbsr.scoring.link import EPS, link, link_inv
from cbsr.scoring.rules import (
    ScoringRule,
    score_grad,
    score_hess,
    score_objective,
    score_value,
    weight,
)

__all__ = [
    "EPS",
    "ScoringRule",
    "link",
    "link_inv",
    "score_grad",
    "score_hess",
    "score_objective",
    "score_value",
    "weight",
]
