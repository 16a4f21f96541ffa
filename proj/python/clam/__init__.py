"""Deep clustering of 2D image datasets with cluster activation maps."""

from clam._core import (
    ConfigError,
    DataError,
    DeepCluster,
    NumericError,
    ShapeError,
    estimate_k,
    hard_assign,
    kl_divergence,
    kmeans,
    load,
    lung_mask,
    matched_accuracy,
    run_experiment,
    silhouette_score,
    simulate,
    soft_assign,
    target_distribution,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DeepCluster",
    "NumericError",
    "ShapeError",
    "estimate_k",
    "hard_assign",
    "kl_divergence",
    "kmeans",
    "load",
    "lung_mask",
    "matched_accuracy",
    "run_experiment",
    "silhouette_score",
    "simulate",
    "soft_assign",
    "target_distribution",
]
