"""JSON serialization of fitted models for the CLI pipeline.

The file is plain JSON with deterministic key order and shortest
round-tripping float representation, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .covariance import Theta
from .estimate import FittedModel, SpatialDataset, fit_fixed_effects
from .partition import PartitionAssignment

FORMAT_VERSION = 1


def model_to_dict(fit: FittedModel, partition_meta: dict | None = None, seed=None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": _tool_version(),
        "model": fit.theta_hat.model,
        "theta": {
            "partial_sill": fit.theta_hat.partial_sill,
            "nugget": fit.theta_hat.nugget,
            "range": fit.theta_hat.range_,
        },
        "coef_names": list(fit.coef_names) if fit.coef_names else None,
        "beta": [float(b) for b in fit.beta_hat],
        "cov_beta": [[float(v) for v in row] for row in fit.cov_beta],
        "variance_method": fit.variance_method,
        "reml_value": None if fit.reml_value is None else float(fit.reml_value),
        "converged": bool(fit.converged),
        "partition": {
            "n_groups": int(fit.partition.n_groups),
            "labels": [int(v) for v in fit.partition.labels],
            **(partition_meta or {}),
        },
        "seed": seed,
    }


def dumps_model(fit: FittedModel, partition_meta: dict | None = None, seed=None) -> str:
    return json.dumps(model_to_dict(fit, partition_meta, seed), indent=2, sort_keys=True) + "\n"


def write_model(path, fit: FittedModel, partition_meta: dict | None = None, seed=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(fit, partition_meta, seed))


def read_model(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('format_version')!r}")
    return doc


def rebuild_fitted_model(doc: dict, data: SpatialDataset) -> FittedModel:
    """Reconstruct a FittedModel (including the block cache) from a model
    file plus the original observation data."""
    theta = Theta(
        partial_sill=doc["theta"]["partial_sill"],
        nugget=doc["theta"]["nugget"],
        range_=doc["theta"]["range"],
        model=doc["model"],
    )
    labels = np.asarray(doc["partition"]["labels"], dtype=np.intp)
    if labels.shape[0] != data.n:
        raise ValueError(
            f"model file partition covers {labels.shape[0]} points but data has {data.n}"
        )
    partition = PartitionAssignment(labels=labels, n_groups=doc["partition"]["n_groups"])
    _, cache = fit_fixed_effects(data, partition, theta)
    return FittedModel(
        theta_hat=theta,
        beta_hat=np.asarray(doc["beta"], dtype=float),
        cov_beta=np.asarray(doc["cov_beta"], dtype=float),
        variance_method=doc["variance_method"],
        partition=partition,
        block_cache=cache,
        reml_value=doc.get("reml_value"),
        converged=doc.get("converged", True),
        coef_names=doc.get("coef_names"),
    )


def _tool_version() -> str:
    from . import __version__

    return __version__
