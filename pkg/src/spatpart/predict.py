"""Nearest-neighbor point kriging and grid-approximated block kriging."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .covariance import (
    Theta,
    build_cov_matrix,
    chol_factor,
    chol_solve,
    cov_value,
    structured_cov,
)
from .estimate import FittedModel, SpatialDataset, assemble_q
from .geometry import NeighborIndex

_VAR_CLAMP_SLACK = 1e-10
_GRID_CHUNK = 1024


@dataclass
class PredictionResult:
    values: np.ndarray
    variances: np.ndarray
    neighbor_ids: np.ndarray | None = None


@dataclass
class BlockPredictionResult:
    value: float
    variance: float
    n_grid: int
    subsampled: bool = False
    # how far the weights are from reproducing the grid-average mean structure
    unbiasedness_gap: np.ndarray | None = None


def _neighborhood(theta: Theta, data: SpatialDataset, nb: np.ndarray, site: np.ndarray):
    """Local covariance solve shared by all point predictors.

    Returns (u, c, fac) with u = Sigma_j^{-1} c for the m-neighborhood, where
    c is the nugget-free cross-covariance between the site and its neighbors.
    """
    pts = data.points[nb]
    d = cdist(site[None, :], pts)[0]
    c = structured_cov(d, theta)
    fac = chol_factor(build_cov_matrix(pts, pts, theta))
    u = chol_solve(fac, c)
    return u, c, fac


def _clamp_variance(var: float) -> float:
    if var < 0:
        if var < -_VAR_CLAMP_SLACK:
            warnings.warn(f"negative prediction variance {var:.3e} clamped to 0", stacklevel=3)
        return 0.0
    return float(var)


def predict_point_global(
    fit: FittedModel,
    data: SpatialDataset,
    index: NeighborIndex,
    site,
    x_site,
    m: int,
) -> tuple[float, float]:
    """Kriging with the pooled global coefficients and their covariance."""
    res = predict_points_global(fit, data, index, np.atleast_2d(site), np.atleast_2d(x_site), m)
    return float(res.values[0]), float(res.variances[0])


def predict_points_global(
    fit: FittedModel,
    data: SpatialDataset,
    index: NeighborIndex,
    sites: np.ndarray,
    x_sites: np.ndarray,
    m: int,
) -> PredictionResult:
    """Vectorized global-coefficient kriging over many sites."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    x_sites = np.atleast_2d(np.asarray(x_sites, dtype=float))
    if x_sites.shape != (sites.shape[0], data.n_coef):
        raise ValueError("x_sites must be (n_sites, R) matching the training design")
    theta = fit.theta_hat
    beta = fit.beta_hat
    cov_beta = fit.cov_beta
    sigma2 = theta.sill
    ids, _ = index.k_nearest_batch(sites, m)
    values = np.empty(sites.shape[0])
    variances = np.empty(sites.shape[0])
    for k in range(sites.shape[0]):
        nb = ids[k]
        u, c, _ = _neighborhood(theta, data, nb, sites[k])
        resid = data.y[nb] - data.X[nb] @ beta
        values[k] = x_sites[k] @ beta + u @ resid
        g = x_sites[k] - data.X[nb].T @ u
        var = sigma2 - c @ u + g @ cov_beta @ g
        variances[k] = _clamp_variance(var)
    return PredictionResult(values=values, variances=variances, neighbor_ids=ids)


def predict_dense(
    fit: FittedModel,
    data: SpatialDataset,
    sites: np.ndarray,
    x_sites: np.ndarray,
) -> PredictionResult:
    """Classical kriging using all n observations with one joint factorization.

    Reference path for small n; cost is one n^3 factorization plus an n x J
    solve for J sites.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    x_sites = np.atleast_2d(np.asarray(x_sites, dtype=float))
    theta = fit.theta_hat
    beta = fit.beta_hat
    fac = chol_factor(build_cov_matrix(data.points, data.points, theta))
    c = structured_cov(cdist(data.points, sites), theta)  # (n, J)
    u = chol_solve(fac, c)
    resid = data.y - data.X @ beta
    values = x_sites @ beta + u.T @ resid
    g = x_sites.T - data.X.T @ u  # (R, J)
    variances = theta.sill - np.einsum("ij,ij->j", c, u) + np.einsum(
        "rj,rs,sj->j", g, fit.cov_beta, g
    )
    variances = np.array([_clamp_variance(v) for v in variances])
    return PredictionResult(values=values, variances=variances)


def predict_point_local(
    theta: Theta,
    data: SpatialDataset,
    index: NeighborIndex,
    site,
    x_site,
    m: int,
) -> tuple[float, float]:
    """Kriging with coefficients re-estimated from the m-neighborhood only.

    All-zero columns of the local design are dropped (with the matching
    entries of x_site), so categorical levels absent locally do not break the
    local GLS solve.
    """
    site = np.asarray(site, dtype=float)
    x_site = np.asarray(x_site, dtype=float)
    nb, _ = index.k_nearest(site, m)
    u, c, fac = _neighborhood(theta, data, nb, site)
    x_local = data.X[nb]
    keep = ~np.all(x_local == 0, axis=0)
    x_local = x_local[:, keep]
    x0 = x_site[keep]
    sx = chol_solve(fac, x_local)
    xtsx = x_local.T @ sx
    try:
        xtsx_fac = chol_factor(xtsx)
    except Exception as exc:
        raise np.linalg.LinAlgError(
            "local design is rank-deficient even after dropping all-zero columns"
        ) from exc
    beta_local = chol_solve(xtsx_fac, x_local.T @ chol_solve(fac, data.y[nb]))
    value = x0 @ beta_local + u @ (data.y[nb] - x_local @ beta_local)
    g = x0 - x_local.T @ u
    var = theta.sill - c @ u + g @ chol_solve(xtsx_fac, g)
    return float(value), _clamp_variance(var)


def predict_weights(
    fit: FittedModel,
    data: SpatialDataset,
    index: NeighborIndex,
    site,
    x_site,
    m: int,
    q: np.ndarray | None = None,
) -> np.ndarray:
    """Length-n weight vector whose dot with y reproduces the global predictor.

    Weights depend only on geometry, the design, and theta. Pass a
    precomputed Q (from assemble_q) when calling for many sites.
    """
    site = np.asarray(site, dtype=float)
    x_site = np.asarray(x_site, dtype=float)
    if q is None:
        q = assemble_q(data, fit.block_cache)
    theta = fit.theta_hat
    nb, _ = index.k_nearest(site, m)
    u, _, _ = _neighborhood(theta, data, nb, site)
    g = x_site - data.X[nb].T @ u
    lam = q.T @ g
    lam[nb] += u
    return lam


def block_predict(
    fit: FittedModel,
    data: SpatialDataset,
    index: NeighborIndex,
    grid_points: np.ndarray,
    x_grid: np.ndarray,
    m: int,
    subsample_cap: int = 5000,
    seed=None,
) -> BlockPredictionResult:
    """Predict the grid-approximated average over a region, with variance.

    The value is exactly the mean of the per-grid-point predictions. The
    variance is the quadratic form of the combined weights under the full
    covariance of observed and grid variables, with covariance rows generated
    in fixed-size chunks so the full matrices are never stored. If n exceeds
    subsample_cap, the observed-observed term is estimated from a uniform
    subsample of rows (flagged in the result).
    """
    grid_points = np.atleast_2d(np.asarray(grid_points, dtype=float))
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    n_grid = grid_points.shape[0]
    if n_grid == 0:
        raise ValueError("grid must be nonempty")
    if x_grid.shape != (n_grid, data.n_coef):
        raise ValueError("x_grid must be (n_grid, R) matching the training design")
    theta = fit.theta_hat
    beta = fit.beta_hat
    n = data.n
    q = assemble_q(data, fit.block_cache)
    ids, _ = index.k_nearest_batch(grid_points, m)

    # point predictions and accumulation of the combined weight vector
    # a_star = mean over grid of lambda_j = Q' g_j + scatter(u_j)
    values = np.empty(n_grid)
    g_sum = np.zeros(data.n_coef)
    a_star = np.zeros(n)
    for k in range(n_grid):
        nb = ids[k]
        u, _, _ = _neighborhood(theta, data, nb, grid_points[k])
        resid = data.y[nb] - data.X[nb] @ beta
        values[k] = x_grid[k] @ beta + u @ resid
        g_sum += x_grid[k] - data.X[nb].T @ u
        a_star[nb] += u
    a_star /= n_grid
    a_star += q.T @ (g_sum / n_grid)
    value = float(values.mean())

    # t1 = a*' V_oo a* over the observed covariance
    subsampled = n > subsample_cap
    rng = np.random.default_rng(seed)
    if subsampled:
        rows = np.sort(rng.choice(n, size=subsample_cap, replace=False))
        scale = n / subsample_cap
    else:
        rows = np.arange(n)
        scale = 1.0
    t1 = 0.0
    for start in range(0, rows.shape[0], _GRID_CHUNK):
        chunk = rows[start : start + _GRID_CHUNK]
        d = cdist(data.points[chunk], data.points)
        t1 += float(a_star[chunk] @ (cov_value(d, theta) @ a_star))
    t1 *= scale

    # t2 = a*' V_ou a with a uniform; cross terms carry no nugget
    w = np.zeros(n)
    for start in range(0, n_grid, _GRID_CHUNK):
        chunk = slice(start, min(start + _GRID_CHUNK, n_grid))
        d = cdist(data.points, grid_points[chunk])
        w += structured_cov(d, theta).sum(axis=1)
    t2 = float(a_star @ w) / n_grid

    # t3 = a' V_uu a; within-grid diagonal carries the full sill
    t3 = 0.0
    for start in range(0, n_grid, _GRID_CHUNK):
        chunk = slice(start, min(start + _GRID_CHUNK, n_grid))
        d = cdist(grid_points[chunk], grid_points)
        t3 += float(np.sum(cov_value(d, theta)))
    t3 /= n_grid * n_grid

    variance = _clamp_variance(t1 - 2.0 * t2 + t3)
    gap = a_star @ data.X - x_grid.mean(axis=0)
    return BlockPredictionResult(
        value=value,
        variance=variance,
        n_grid=n_grid,
        subsampled=subsampled,
        unbiasedness_gap=gap,
    )
