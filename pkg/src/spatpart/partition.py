"""Group-label assignment defining the block structure of the working covariance.

Three schemes: uniformly random balanced groups, spatially compact groups via
k-means on the coordinates, and compact with a fraction randomly reassigned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_LLOYD_ITER = 100


@dataclass(frozen=True)
class PartitionAssignment:
    """Group labels for n points; every group nonempty."""

    labels: np.ndarray
    n_groups: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        object.__setattr__(self, "labels", labels)
        counts = np.bincount(labels, minlength=self.n_groups)
        if counts.shape[0] > self.n_groups or np.any(counts == 0):
            raise ValueError("every group id in 0..n_groups-1 must be nonempty")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_groups)

    def groups(self) -> list[np.ndarray]:
        """Index arrays per group, in ascending group-id order."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(order, bounds)


def _check_target(n: int, target_size: int):
    if not 1 <= target_size <= n:
        raise ValueError(f"need 1 <= target_size <= n, got target_size={target_size}, n={n}")


def partition_random(n: int, target_size: int, seed=None) -> PartitionAssignment:
    """Uniformly random balanced assignment; group sizes differ by at most 1."""
    _check_target(n, target_size)
    p = int(np.ceil(n / target_size))
    rng = np.random.default_rng(seed)
    labels = rng.permutation(n) % p
    return PartitionAssignment(labels=labels, n_groups=p)


def partition_compact(points: np.ndarray, target_size: int, seed=None) -> PartitionAssignment:
    """Spatially compact groups: Lloyd k-means with k-means++ starts.

    Iterates to an assignment fixpoint (or 100 iterations). Group sizes are
    whatever k-means produces; no rebalancing. All-coincident points collapse
    to a single group.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    _check_target(n, target_size)
    if np.all(points == points[0]):
        return PartitionAssignment(labels=np.zeros(n, dtype=np.intp), n_groups=1)
    k = int(np.ceil(n / target_size))
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    labels = _assign(points, centroids)
    for _ in range(_MAX_LLOYD_ITER):
        centroids = _update_centroids(points, labels, centroids, k)
        new_labels = _assign(points, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels = _compress_labels(labels)
    return PartitionAssignment(labels=labels, n_groups=int(labels.max()) + 1)


def partition_mixed(
    points: np.ndarray, target_size: int, reassign_frac: float = 0.10, seed=None
) -> PartitionAssignment:
    """Compact partition with floor(frac * size) members of each group moved.

    Moved members go to independently chosen uniform destination groups.
    """
    if not 0 <= reassign_frac < 1:
        raise ValueError(f"need 0 <= reassign_frac < 1, got {reassign_frac}")
    rng = np.random.default_rng(seed)
    base = partition_compact(points, target_size, seed=rng)
    p = base.n_groups
    if p == 1 or reassign_frac == 0:
        return base
    labels = base.labels.copy()
    for g, members in enumerate(base.groups()):
        n_move = int(np.floor(reassign_frac * members.shape[0]))
        if n_move == 0:
            continue
        movers = rng.choice(members, size=n_move, replace=False)
        others = np.delete(np.arange(p), g)
        labels[movers] = rng.choice(others, size=n_move, replace=True)
    # reassignment can only empty a source group if frac ~ 1; guard anyway
    counts = np.bincount(labels, minlength=p)
    if np.any(counts == 0):
        labels = _compress_labels(labels)
        p = int(labels.max()) + 1
    return PartitionAssignment(labels=labels, n_groups=p)


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, 2))
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=closest / total)
        centroids[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def _update_centroids(points, labels, centroids, k) -> np.ndarray:
    new = centroids.copy()
    for j in range(k):
        members = labels == j
        if members.any():
            new[j] = points[members].mean(axis=0)
        else:
            # empty cluster: re-seed at the point farthest from its centroid
            dist2 = np.sum((points - new[labels]) ** 2, axis=1)
            new[j] = points[np.argmax(dist2)]
    return new


def _compress_labels(labels: np.ndarray) -> np.ndarray:
    _, compressed = np.unique(labels, return_inverse=True)
    return compressed.astype(np.intp)
