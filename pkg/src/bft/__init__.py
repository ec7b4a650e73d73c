"""Bayes factor testing of linear equality and order constrained hypotheses.

The package computes exploratory and confirmatory Bayes factors and posterior
hypothesis probabilities for constraints on means, regression coefficients,
group variances, and correlations, using density-ratio and region-probability
factorizations with default (fractional or uniform) priors.
"""

__version__ = "0.1.0"

from .parser import ParameterSpace, ConstraintMatrices, HypothesisSystem, parse, add_complement
from .distributions import RandomStream
from .engine import (
    Measures,
    MeasureTable,
    evaluate_system,
    exploratory_triad,
    grouped_effect_test,
    aggregate_imputations,
)

__all__ = [
    "ParameterSpace",
    "ConstraintMatrices",
    "HypothesisSystem",
    "parse",
    "add_complement",
    "RandomStream",
    "Measures",
    "MeasureTable",
    "evaluate_system",
    "exploratory_triad",
    "grouped_effect_test",
    "aggregate_imputations",
    "__version__",
]
