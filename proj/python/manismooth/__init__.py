"""Manifold-smoothness measures for predicting out-of-distribution accuracy."""

from ._core import (
    Error,
    __version__,
    atc_predict,
    atc_threshold,
    dataset_smoothness,
    decision_distribution,
    default_experiment,
    evaluate,
    kendall_tau,
    mean_absolute_error,
    ols_fit,
    r_squared,
    smoothness,
    spectral_norm,
    synth,
)

__all__ = [
    "Error",
    "__version__",
    "atc_predict",
    "atc_threshold",
    "dataset_smoothness",
    "decision_distribution",
    "default_experiment",
    "evaluate",
    "kendall_tau",
    "mean_absolute_error",
    "ols_fit",
    "r_squared",
    "smoothness",
    "spectral_norm",
    "synth",
]
