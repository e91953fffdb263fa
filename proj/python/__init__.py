"""Mortality forecasting models combined with Shapley-value weights."""

from ._core import (
    DataError,
    Fit,
    FitError,
    Surface,
    combination_game,
    combine_interval,
    dm_test,
    fit,
    interval_score,
    model_labels,
    run,
    shap_weights,
    shapley_values,
    synthesize,
)

__all__ = [
    "DataError",
    "Fit",
    "FitError",
    "Surface",
    "combination_game",
    "combine_interval",
    "dm_test",
    "fit",
    "interval_score",
    "model_labels",
    "run",
    "shap_weights",
    "shapley_values",
    "synthesize",
]
