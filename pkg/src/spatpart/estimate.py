"""Block-diagonal REML, pooled GLS fixed effects, and variance estimators.

The working covariance zeroes all cross-block entries, so only per-block
inverses are needed. Fixed-effect uncertainty is then computed back under the
full covariance: the exact estimator adds a correction built from cross-block
covariances, generated one pair at a time and never stored whole.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .covariance import (
    NUGGET_FLOOR_REL,
    CholFactor,
    Theta,
    build_cov_matrix,
    chol_factor,
    chol_solve,
    cov_value,
)
from .partition import PartitionAssignment, partition_compact, partition_mixed, partition_random

VARIANCE_METHODS = ("exact", "empirical", "pooled")

_N_THREADS = 1


def set_num_threads(k: int):
    """Cap the worker pool used for per-block and cross-pair work.

    Results are bit-identical across thread counts: work items are mapped in
    a fixed order and reduced sequentially.
    """
    global _N_THREADS
    if k < 1:
        raise ValueError("thread count must be >= 1")
    _N_THREADS = int(k)


def _parallel_map(fn, items):
    if _N_THREADS == 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=_N_THREADS) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SpatialDataset:
    """Observed locations, response, and design matrix (intercept included)."""

    points: np.ndarray  # (n, 2)
    y: np.ndarray  # (n,)
    X: np.ndarray  # (n, R)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        n = points.shape[0]
        if y.shape != (n,) or X.shape[0] != n:
            raise ValueError("points, y, and X must agree on n")
        if n < X.shape[1]:
            raise ValueError("need n >= number of columns of X")
        for name, arr in (("points", points), ("y", y), ("X", X)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]


@dataclass
class BlockCache:
    """Per-block quantities cached from one pass under a fixed theta."""

    theta: Theta
    indices: list[np.ndarray]
    chol: list[CholFactor]
    sinv_x: list[np.ndarray]  # Sigma_ii^{-1} X_i, (n_i, R)
    sinv_y: list[np.ndarray]  # Sigma_ii^{-1} y_i, (n_i,)
    xtsx: list[np.ndarray]  # X_i' Sigma_ii^{-1} X_i
    xtsy: list[np.ndarray]
    txx: np.ndarray  # sum of xtsx
    txy: np.ndarray
    _beta_blocks: list | None = field(default=None, repr=False)

    @property
    def n_blocks(self) -> int:
        return len(self.indices)

    def beta_blocks(self) -> list[np.ndarray | None]:
        """Per-block GLS coefficients; None where X_i' Sigma_ii^{-1} X_i is singular."""
        if self._beta_blocks is None:
            out = []
            for a, b in zip(self.xtsx, self.xtsy):
                try:
                    out.append(np.linalg.solve(a, b))
                except np.linalg.LinAlgError:
                    out.append(None)
            self._beta_blocks = out
        return self._beta_blocks


@dataclass
class FittedModel:
    """Everything needed downstream of estimation."""

    theta_hat: Theta
    beta_hat: np.ndarray
    cov_beta: np.ndarray
    variance_method: str
    partition: PartitionAssignment
    block_cache: BlockCache
    reml_value: float | None = None
    converged: bool = True
    timings: dict = field(default_factory=dict)
    coef_names: list | None = None


@dataclass
class CovFitResult:
    theta: Theta
    reml_value: float
    converged: bool
    n_iter: int
    n_eval: int


def _block_quantities(args):
    data, idx, theta, dist = args
    xi = data.X[idx]
    if dist is None:
        pts = data.points[idx]
        sigma = build_cov_matrix(pts, pts, theta)
    else:
        # dist is bitwise symmetric, so the elementwise map is too
        sigma = cov_value(dist, theta)
    fac = chol_factor(sigma)
    sx = chol_solve(fac, xi)
    sy = chol_solve(fac, data.y[idx])
    return fac, sx, sy, xi.T @ sx, xi.T @ sy


def _precompute_block_dists(data: SpatialDataset, partition: PartitionAssignment):
    """Per-block distance matrices, reused across optimizer iterations."""
    groups = partition.groups()
    return groups, [cdist(data.points[idx], data.points[idx]) for idx in groups]


def _build_block_cache(
    data: SpatialDataset,
    partition: PartitionAssignment,
    theta: Theta,
    pre=None,
) -> BlockCache:
    if pre is None:
        indices = partition.groups()
        dists = [None] * len(indices)
    else:
        indices, dists = pre
    results = _parallel_map(
        _block_quantities, [(data, idx, theta, d) for idx, d in zip(indices, dists)]
    )
    chols, sinv_x, sinv_y, xtsx, xtsy = [], [], [], [], []
    r = data.n_coef
    txx = np.zeros((r, r))
    txy = np.zeros(r)
    for fac, sx, sy, a, b in results:
        chols.append(fac)
        sinv_x.append(sx)
        sinv_y.append(sy)
        xtsx.append(a)
        xtsy.append(b)
        txx += a
        txy += b
    return BlockCache(
        theta=theta,
        indices=indices,
        chol=chols,
        sinv_x=sinv_x,
        sinv_y=sinv_y,
        xtsx=xtsx,
        xtsy=xtsy,
        txx=txx,
        txy=txy,
    )


def reml_objective(
    data: SpatialDataset, partition: PartitionAssignment, theta: Theta, _pre=None
) -> float:
    """REML criterion under the block-diagonal working covariance.

    sum_i log|S_ii| + sum_i r_i' S_ii^{-1} r_i + log|sum_i X_i' S_ii^{-1} X_i|
    with residuals from the pooled GLS coefficients at this theta. The
    theta-free additive constant is dropped.
    """
    cache = _build_block_cache(data, partition, theta, pre=_pre)
    return _reml_from_cache(data, cache)


def _reml_from_cache(data: SpatialDataset, cache: BlockCache) -> float:
    beta = np.linalg.solve(cache.txx, cache.txy)
    logdet_sum = sum(fac.logdet for fac in cache.chol)
    quad = 0.0
    for idx, fac, sy, sx in zip(cache.indices, cache.chol, cache.sinv_y, cache.sinv_x):
        r_i = data.y[idx] - data.X[idx] @ beta
        # S_ii^{-1} r_i reuses the cached solves: S^{-1}y - S^{-1}X beta
        quad += float(r_i @ (sy - sx @ beta))
    sign, logdet_txx = np.linalg.slogdet(cache.txx)
    if sign <= 0:
        raise np.linalg.LinAlgError("X' Sigma^{-1} X is not positive definite")
    return float(logdet_sum + quad + logdet_txx)


def _apply_nugget_floor(tau2: float, eta2: float) -> float:
    return max(eta2, NUGGET_FLOOR_REL * (tau2 + eta2))


def _initial_theta(data: SpatialDataset, model: str) -> Theta:
    beta_ols, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    resid = data.y - data.X @ beta_ols
    s2 = float(np.var(resid, ddof=1)) if data.n > 1 else 1.0
    s2 = max(s2, 1e-12)
    span = data.points.max(axis=0) - data.points.min(axis=0)
    diag = float(np.sqrt(np.sum(span**2)))
    rho0 = diag / 4.0 if diag > 0 else 1.0
    return Theta(partial_sill=s2 / 2.0, nugget=s2 / 2.0, range_=rho0, model=model)


def fit_covariance(
    data: SpatialDataset,
    partition: PartitionAssignment,
    model: str = "exponential",
    initial: Theta | None = None,
    max_iter: int = 500,
    f_tol: float = 1e-6,
) -> CovFitResult:
    """Minimize the partitioned REML criterion over log(tau2, eta2, rho).

    Derivative-free simplex search; non-convergence is flagged, not fatal.
    """
    if initial is None:
        initial = _initial_theta(data, model)
    x0 = np.log([max(initial.partial_sill, 1e-12), max(initial.nugget, 1e-12), initial.range_])
    pre = _precompute_block_dists(data, partition)

    def objective(p):
        tau2, eta2, rho = np.exp(p)
        if not np.all(np.isfinite([tau2, eta2, rho])):
            return np.inf
        eta2 = _apply_nugget_floor(tau2, eta2)
        theta = Theta(partial_sill=tau2, nugget=eta2, range_=rho, model=model)
        try:
            return reml_objective(data, partition, theta, _pre=pre)
        except (np.linalg.LinAlgError, FloatingPointError):
            return np.inf

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": max_iter, "fatol": f_tol, "xatol": 1e-6, "adaptive": False},
        )
    tau2, eta2, rho = np.exp(res.x)
    eta2 = _apply_nugget_floor(tau2, eta2)
    theta = Theta(partial_sill=float(tau2), nugget=float(eta2), range_=float(rho), model=model)
    if not res.success:
        warnings.warn(
            f"covariance fit did not converge in {res.nit} iterations; "
            "returning best theta found",
            stacklevel=2,
        )
    return CovFitResult(
        theta=theta,
        reml_value=float(res.fun),
        converged=bool(res.success),
        n_iter=int(res.nit),
        n_eval=int(res.nfev),
    )


def fit_fixed_effects(
    data: SpatialDataset, partition: PartitionAssignment, theta: Theta
) -> tuple[np.ndarray, BlockCache]:
    """Pooled GLS coefficients across blocks, with the per-block cache."""
    cache = _build_block_cache(data, partition, theta)
    try:
        beta = np.linalg.solve(cache.txx, cache.txy)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "pooled X' Sigma^{-1} X is singular; is the design rank-deficient?"
        ) from exc
    return beta, cache


def assemble_q(data: SpatialDataset, cache: BlockCache) -> np.ndarray:
    """The R x n matrix Q with beta_hat = Q @ y (columns in original point order)."""
    r = cache.txx.shape[0]
    q = np.empty((r, data.n))
    txx_fac = chol_factor(cache.txx)
    for idx, sx in zip(cache.indices, cache.sinv_x):
        q[:, idx] = chol_solve(txx_fac, sx.T)
    return q


def var_beta_exact(
    data: SpatialDataset,
    partition: PartitionAssignment,
    theta: Theta,
    cache: BlockCache,
) -> np.ndarray:
    """Covariance of the pooled coefficients under the full covariance.

    T_xx^{-1} plus the sandwich correction from cross-block covariances,
    accumulated pair by pair in ascending (i, j) order.
    """
    p = cache.n_blocks
    r = cache.txx.shape[0]
    pts = [data.points[idx] for idx in cache.indices]

    def pair_term(pair):
        i, j = pair
        sigma_ij = build_cov_matrix(pts[i], pts[j], theta)
        return cache.sinv_x[i].T @ sigma_ij @ cache.sinv_x[j]

    pairs = [(i, j) for i in range(p - 1) for j in range(i + 1, p)]
    wxx = np.zeros((r, r))
    for term in _parallel_map(pair_term, pairs):
        wxx += term
        wxx += term.T
    txx_fac = chol_factor(cache.txx)
    txx_inv = chol_solve(txx_fac, np.eye(r))
    cov = txx_inv + txx_inv @ wxx @ txx_inv
    return 0.5 * (cov + cov.T)


def _usable_blocks(cache: BlockCache) -> tuple[list[int], int]:
    betas = cache.beta_blocks()
    usable = [i for i, b in enumerate(betas) if b is not None]
    dropped = cache.n_blocks - len(usable)
    if dropped:
        warnings.warn(
            f"{dropped} block(s) with singular X_i' Sigma_ii^{{-1}} X_i dropped "
            "from the alternative variance estimator",
            stacklevel=3,
        )
    return usable, dropped


def var_beta_alt1(cache: BlockCache, beta_hat: np.ndarray) -> np.ndarray:
    """Empirical scatter of the per-block coefficients around the pooled one."""
    usable, _ = _usable_blocks(cache)
    p = len(usable)
    if p < 2:
        raise ValueError("empirical variance estimator needs at least 2 usable blocks")
    betas = cache.beta_blocks()
    r = beta_hat.shape[0]
    acc = np.zeros((r, r))
    for i in usable:
        d = betas[i] - beta_hat
        acc += np.outer(d, d)
    return acc / (p * (p - 1))


def var_beta_alt2(cache: BlockCache) -> np.ndarray:
    """Average of per-block coefficient covariances, shrunk by the block count."""
    usable, _ = _usable_blocks(cache)
    p = len(usable)
    if p < 1:
        raise ValueError("no usable blocks")
    r = cache.txx.shape[0]
    acc = np.zeros((r, r))
    for i in usable:
        acc += np.linalg.inv(cache.xtsx[i])
    cov = acc / (p * p)
    return 0.5 * (cov + cov.T)


def dense_reml_objective(data: SpatialDataset, theta: Theta) -> float:
    """Full-covariance REML criterion (same dropped constant as the block path)."""
    single = PartitionAssignment(labels=np.zeros(data.n, dtype=np.intp), n_groups=1)
    return reml_objective(data, single, theta)


def fit_full_oracle(
    data: SpatialDataset,
    model: str = "exponential",
    theta: Theta | None = None,
    initial: Theta | None = None,
    max_n: int = 3000,
    max_iter: int = 500,
) -> FittedModel:
    """Dense REML + GLS reference fit; refuses n above max_n.

    ``theta`` fixes the covariance parameters outright; ``initial`` only seeds
    the simplex search (e.g. with a partitioned estimate) to cut iterations.
    """
    if data.n > max_n:
        raise ValueError(f"dense oracle capped at n={max_n}, got n={data.n}")
    single = PartitionAssignment(labels=np.zeros(data.n, dtype=np.intp), n_groups=1)
    t0 = time.perf_counter()
    if theta is None:
        res = fit_covariance(data, single, model=model, initial=initial, max_iter=max_iter)
        theta = res.theta
        reml_value = res.reml_value
        converged = res.converged
    else:
        reml_value = reml_objective(data, single, theta)
        converged = True
    t1 = time.perf_counter()
    beta, cache = fit_fixed_effects(data, single, theta)
    cov = np.linalg.inv(cache.txx)
    cov = 0.5 * (cov + cov.T)
    t2 = time.perf_counter()
    return FittedModel(
        theta_hat=theta,
        beta_hat=beta,
        cov_beta=cov,
        variance_method="exact",
        partition=single,
        block_cache=cache,
        reml_value=reml_value,
        converged=converged,
        timings={"covariance_s": t1 - t0, "fixed_effects_s": t2 - t1},
    )


def _make_partition(scheme: str, data: SpatialDataset, size: int, seed) -> PartitionAssignment:
    if scheme == "random":
        return partition_random(data.n, size, seed=seed)
    if scheme == "compact":
        return partition_compact(data.points, size, seed=seed)
    if scheme == "mixed":
        return partition_mixed(data.points, size, seed=seed)
    raise ValueError(f"unknown partition scheme {scheme!r}")


def fit_spatial_model(
    data: SpatialDataset,
    model: str = "exponential",
    cope_scheme: str = "compact",
    cope_size: int = 50,
    fefe_scheme: str | None = None,
    fefe_size: int | None = None,
    variance_method: str = "exact",
    seed=None,
    max_iter: int = 500,
) -> FittedModel:
    """One-call pipeline: partition, fit theta, fit beta, pick a variance estimate.

    Separate partitions may be used for covariance and fixed-effects
    estimation; by default the fixed-effects partition reuses the covariance
    one (same scheme and size, shared block inverses).
    """
    if variance_method not in VARIANCE_METHODS:
        raise ValueError(f"variance_method must be one of {VARIANCE_METHODS}")
    rng = np.random.default_rng(seed)
    cope_part = _make_partition(cope_scheme, data, cope_size, rng)
    t0 = time.perf_counter()
    cov_fit = fit_covariance(data, cope_part, model=model, max_iter=max_iter)
    t1 = time.perf_counter()
    same_partition = (fefe_scheme is None or fefe_scheme == cope_scheme) and (
        fefe_size is None or fefe_size == cope_size
    )
    if same_partition:
        fefe_part = cope_part
    else:
        fefe_part = _make_partition(fefe_scheme or cope_scheme, data, fefe_size or cope_size, rng)
    beta, cache = fit_fixed_effects(data, fefe_part, cov_fit.theta)
    if variance_method == "exact":
        cov_beta = var_beta_exact(data, fefe_part, cov_fit.theta, cache)
    elif variance_method == "empirical":
        cov_beta = var_beta_alt1(cache, beta)
    else:
        cov_beta = var_beta_alt2(cache)
    t2 = time.perf_counter()
    return FittedModel(
        theta_hat=cov_fit.theta,
        beta_hat=beta,
        cov_beta=cov_beta,
        variance_method=variance_method,
        partition=fefe_part,
        block_cache=cache,
        reml_value=cov_fit.reml_value,
        converged=cov_fit.converged,
        timings={"covariance_s": t1 - t0, "fixed_effects_s": t2 - t1},
    )
