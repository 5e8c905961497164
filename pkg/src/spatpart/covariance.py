"""Covariance functions, matrix construction, and Cholesky kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import cho_solve
from scipy.spatial.distance import cdist

MODELS = ("exponential", "spherical")

# Relative nugget floor applied during optimization so that covariance
# matrices stay positive definite even with near-duplicate locations.
NUGGET_FLOOR_REL = 1e-8


class FactorizationError(RuntimeError):
    """Cholesky factorization failed even after one jitter retry."""


@dataclass(frozen=True)
class Theta:
    """Covariance parameters: partial sill, nugget, range, and model tag."""

    partial_sill: float
    nugget: float
    range_: float
    model: str = "exponential"

    def __post_init__(self):
        if not (np.isfinite(self.partial_sill) and self.partial_sill >= 0):
            raise ValueError(f"partial_sill must be finite and >= 0, got {self.partial_sill}")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError(f"nugget must be finite and >= 0, got {self.nugget}")
        if not (np.isfinite(self.range_) and self.range_ > 0):
            raise ValueError(f"range_ must be finite and > 0, got {self.range_}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")

    @property
    def sill(self) -> float:
        return self.partial_sill + self.nugget


def cov_exponential(d, theta: Theta):
    """Exponential covariance: tau2*exp(-d/rho), plus the nugget at d == 0."""
    d = np.asarray(d, dtype=float)
    val = theta.partial_sill * np.exp(-d / theta.range_)
    return val + theta.nugget * (d == 0)


def cov_spherical(d, theta: Theta):
    """Spherical covariance: compact support ending at d == rho."""
    d = np.asarray(d, dtype=float)
    t = d / theta.range_
    val = theta.partial_sill * ((1.0 - 1.5 * t + 0.5 * t * t * t) * (t < 1.0))
    return val + theta.nugget * (d == 0)


def cov_value(d, theta: Theta):
    """Covariance at distance d under theta's model, nugget included at d == 0."""
    if theta.model == "exponential":
        return cov_exponential(d, theta)
    return cov_spherical(d, theta)


def structured_cov(d, theta: Theta):
    """Spatially structured part only (no nugget, even at d == 0).

    Used for cross-covariances between a prediction target and observations,
    which never share a nugget component.
    """
    if theta.model == "exponential":
        d = np.asarray(d, dtype=float)
        return theta.partial_sill * np.exp(-d / theta.range_)
    d = np.asarray(d, dtype=float)
    rho = theta.range_
    return theta.partial_sill * (1.0 - 1.5 * d / rho + 0.5 * (d / rho) ** 3) * (d < rho)


def build_cov_matrix(rows: np.ndarray, cols: np.ndarray, theta: Theta) -> np.ndarray:
    """Covariance matrix between two point sets.

    When ``rows is cols`` the result is built from one triangle so it is
    bitwise symmetric, with diagonal partial_sill + nugget.
    """
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    if rows.size == 0 or cols.size == 0:
        raise ValueError("point lists must be nonempty")
    d = cdist(rows, cols)
    c = cov_value(d, theta)
    if rows is cols or (rows.shape == cols.shape and np.array_equal(rows, cols)):
        upper = np.triu(c)
        c = upper + np.triu(c, 1).T
    return c


def cross_cov_matrix(rows: np.ndarray, cols: np.ndarray, theta: Theta) -> np.ndarray:
    """Structured (nugget-free) covariance between distinct random variables."""
    d = cdist(np.asarray(rows, dtype=float), np.asarray(cols, dtype=float))
    return structured_cov(d, theta)


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular Cholesky factor with cached log-determinant."""

    lower: np.ndarray
    logdet: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.logdet is None:
            object.__setattr__(
                self, "logdet", 2.0 * float(np.sum(np.log(np.diag(self.lower))))
            )


def chol_factor(m: np.ndarray) -> CholFactor:
    """Cholesky factor of a symmetric PD matrix, with one jitter retry."""
    m = np.asarray(m, dtype=float)
    try:
        lower = scipy.linalg.cholesky(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(m) / m.shape[0]
        try:
            lower = scipy.linalg.cholesky(m + jitter * np.eye(m.shape[0]), lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"matrix of size {m.shape[0]} is not positive definite "
                f"(jitter {jitter:.3e} did not help)"
            ) from exc
    return CholFactor(lower=lower)


def chol_solve(factor: CholFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve m @ x = rhs given the Cholesky factor of m."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != factor.lower.shape[0]:
        raise ValueError(
            f"rhs has leading dimension {rhs.shape[0]}, "
            f"factor is {factor.lower.shape[0]}x{factor.lower.shape[0]}"
        )
    return cho_solve((factor.lower, True), rhs, check_finite=False)
