"""Spatial Durbin error gravity models for origin-destination flows."""

from .design import (
    CovariateTable,
    DesignError,
    FlowMatrix,
    ModelSpec,
    StackedDesign,
    build_design,
    expand_destination,
    expand_origin,
    flatten_od,
    vec_stack,
)
from .estimation import (
    Effect,
    FitResult,
    LrTest,
    aic,
    concentrated_loglik,
    effects_split,
    fit_ols,
    fit_sdem,
    log_jacobian,
    lr_test,
    significance_stars,
    standard_errors,
)
from .weights import (
    Centroids,
    SpatialWeights,
    apply_destination_lag,
    build_weights,
    cutoff_adjacency,
    pairwise_distances,
    row_standardize,
    spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "CovariateTable",
    "DesignError",
    "FlowMatrix",
    "ModelSpec",
    "StackedDesign",
    "build_design",
    "expand_destination",
    "expand_origin",
    "flatten_od",
    "vec_stack",
    "Effect",
    "FitResult",
    "LrTest",
    "aic",
    "concentrated_loglik",
    "effects_split",
    "fit_ols",
    "fit_sdem",
    "log_jacobian",
    "lr_test",
    "significance_stars",
    "standard_errors",
    "Centroids",
    "SpatialWeights",
    "apply_destination_lag",
    "build_weights",
    "cutoff_adjacency",
    "pairwise_distances",
    "row_standardize",
    "spectrum",
]
