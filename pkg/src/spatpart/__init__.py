"""Partitioned spatial linear models for large point-referenced data.

Fits covariance parameters by REML on a block-diagonal working covariance,
pools generalized-least-squares fixed effects across blocks with an exact
cross-block variance correction, and predicts with nearest-neighbor point
kriging and grid-approximated block kriging.
"""

from .covariance import Theta, build_cov_matrix, chol_factor, chol_solve
from .estimate import (
    FittedModel,
    SpatialDataset,
    fit_covariance,
    fit_fixed_effects,
    fit_full_oracle,
    fit_spatial_model,
    reml_objective,
    var_beta_alt1,
    var_beta_alt2,
    var_beta_exact,
)
from .geometry import NeighborIndex, euclidean_distance
from .partition import (
    PartitionAssignment,
    partition_compact,
    partition_mixed,
    partition_random,
)
from .predict import (
    block_predict,
    predict_point_global,
    predict_point_local,
    predict_points_global,
    predict_weights,
)

__version__ = "0.1.0"

__all__ = [
    "Theta",
    "build_cov_matrix",
    "chol_factor",
    "chol_solve",
    "NeighborIndex",
    "euclidean_distance",
    "PartitionAssignment",
    "partition_random",
    "partition_compact",
    "partition_mixed",
    "SpatialDataset",
    "FittedModel",
    "reml_objective",
    "fit_covariance",
    "fit_fixed_effects",
    "fit_full_oracle",
    "fit_spatial_model",
    "var_beta_exact",
    "var_beta_alt1",
    "var_beta_alt2",
    "predict_point_global",
    "predict_points_global",
    "predict_point_local",
    "predict_weights",
    "block_predict",
    "__version__",
]
