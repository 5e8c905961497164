"""Synthetic data generators for benchmarking: an exact Gaussian-field method
(Cholesky of the full covariance, so capped in size) and a sum-of-random-sine
surface method that scales to millions of locations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import Theta, build_cov_matrix, chol_factor

GEOSTAT_CAP = 3000
BETA_TRUE = np.array([1.0, 1.0, 1.0])
_N_SINE_WAVES = 100
_SURFACE_VARIANCE = 10.0
_NOISE_VARIANCE = 0.1


@dataclass(frozen=True)
class SimConfig:
    method: str  # "geostat" | "sumsine"
    n: int
    grid_side: int = 40
    theta: Theta | None = None  # geostat only
    seed: int | None = None

    def __post_init__(self):
        if self.method not in ("geostat", "sumsine"):
            raise ValueError(f"method must be 'geostat' or 'sumsine', got {self.method!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.method == "geostat":
            if self.theta is None:
                raise ValueError("geostat simulation requires theta")
            if self.n + self.grid_side**2 > GEOSTAT_CAP:
                raise ValueError(
                    f"geostat total size {self.n + self.grid_side ** 2} exceeds "
                    f"cap {GEOSTAT_CAP} (O(n^3) factorization)"
                )


@dataclass
class SimRealization:
    """One simulated dataset: observed rows first, then the prediction grid."""

    points_obs: np.ndarray
    points_grid: np.ndarray
    y_obs: np.ndarray
    y_grid: np.ndarray
    X_obs: np.ndarray
    X_grid: np.ndarray
    epsilon: np.ndarray  # over all N locations, observed first
    beta_true: np.ndarray = field(default_factory=lambda: BETA_TRUE.copy())
    theta_true: Theta | None = None


def unit_square_points(n: int, rng) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(n, 2))


def square_grid(side: int) -> np.ndarray:
    """Uniformly spaced side x side grid of cell centers in the unit square."""
    ticks = (np.arange(side) + 0.5) / side
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def simulate_geostat(points: np.ndarray, theta: Theta, seed=None) -> np.ndarray:
    """Exact Gaussian field: L z with L the Cholesky factor of the covariance."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] > GEOSTAT_CAP:
        raise ValueError(f"geostat simulation capped at {GEOSTAT_CAP} points")
    rng = np.random.default_rng(seed)
    fac = chol_factor(build_cov_matrix(points, points, theta))
    return fac.lower @ rng.standard_normal(points.shape[0])


def sumsine_surface(points: np.ndarray, seed=None) -> np.ndarray:
    """Sum of 100 randomly rotated, shifted, scaled sine surfaces.

    Standardized to sample mean 0 and sample variance exactly 10 over the
    given locations; no independent noise added.
    """
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    s1 = points[:, 0]
    s2 = points[:, 1]
    total = np.zeros(points.shape[0])
    for i in range(1, _N_SINE_WAVES + 1):
        u1, u2, u3, u4, u5, u6 = rng.uniform(size=6)
        ang = u1 * np.pi
        cos_a, sin_a = np.cos(ang), np.sin(ang)
        s1r = s1 * cos_a + s2 * sin_a
        s2r = -s1 * sin_a + s2 * cos_a
        amp = u2 * (1.0 - (i - 1) / _N_SINE_WAVES)
        total += amp * (
            np.sin(i * u3 * 2.0 * np.pi * (s1r + u4 * np.pi))
            + np.sin(i * u5 * 2.0 * np.pi * (s2r + u6 * np.pi))
        )
    centered = total - total.mean()
    sd = centered.std(ddof=1)
    if sd == 0:
        return centered
    return centered * (np.sqrt(_SURFACE_VARIANCE) / sd)


def simulate_sumsine(points: np.ndarray, seed=None) -> np.ndarray:
    """Sum-of-sines surface plus independent noise of variance 0.1."""
    points = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    surface = sumsine_surface(points, seed=rng)
    return surface + rng.normal(0.0, np.sqrt(_NOISE_VARIANCE), size=points.shape[0])


def make_response(points: np.ndarray, epsilon: np.ndarray, field_fn, seed=None):
    """Response and design: intercept, an iid-normal covariate, and a
    spatially patterned covariate drawn from the same generator as the error.

    field_fn(seed) must return a fresh error-like realization over `points`.
    """
    points = np.asarray(points, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.shape[0] != points.shape[0]:
        raise ValueError("epsilon length must match points")
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(points.shape[0])
    x2 = field_fn(rng)
    x = np.column_stack([np.ones(points.shape[0]), x1, x2])
    y = x @ BETA_TRUE + epsilon
    return y, x


def simulate_realization(config: SimConfig) -> SimRealization:
    """Full benchmark realization over n observed points plus the grid."""
    root = np.random.SeedSequence(config.seed)
    s_pts, s_eps, s_resp = root.spawn(3)
    rng_pts = np.random.default_rng(s_pts)
    points_obs = unit_square_points(config.n, rng_pts)
    points_grid = square_grid(config.grid_side)
    all_points = np.vstack([points_obs, points_grid])

    if config.method == "geostat":
        # factor once; error and the patterned covariate share the factor
        fac = chol_factor(build_cov_matrix(all_points, all_points, config.theta))

        def field_fn(rng):
            return fac.lower @ rng.standard_normal(all_points.shape[0])

        epsilon = field_fn(np.random.default_rng(s_eps))
        theta_true = config.theta
    else:

        def field_fn(rng):
            return simulate_sumsine(all_points, seed=rng)

        epsilon = field_fn(np.random.default_rng(s_eps))
        theta_true = None

    y, x = make_response(all_points, epsilon, field_fn, seed=s_resp)
    n = config.n
    return SimRealization(
        points_obs=points_obs,
        points_grid=points_grid,
        y_obs=y[:n],
        y_grid=y[n:],
        X_obs=x[:n],
        X_grid=x[n:],
        epsilon=epsilon,
        theta_true=theta_true,
    )
