"""Lloyd k-means with k-means++ seeding and empty-cluster repair.

Determinism contract: given the same points and seed, the result is
bit-identical. The assignment step breaks distance ties toward the lowest
center index, and center updates use fixed-order summation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, check_same_dim, readonly
from .exceptions import EmptyInputError, InfeasibleKError
from .kernels import sq_distances_to
from .rng import stream

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Clustering:
    """Result of one k-means run.

    ``inertia`` is the sum of squared distances from each point to its
    assigned center; ``inertia_trace`` holds the per-iteration values and
    is non-increasing.
    """

    centers: np.ndarray
    assignment: np.ndarray
    inertia: float
    inertia_trace: tuple
    n_iter: int

    def __post_init__(self):
        object.__setattr__(self, "centers", readonly(np.asarray(self.centers, dtype=np.float64)))
        object.__setattr__(self, "assignment", readonly(np.asarray(self.assignment, dtype=np.intp)))
        object.__setattr__(self, "inertia_trace", tuple(self.inertia_trace))

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


def _plus_plus_init(points: np.ndarray, n_clusters: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((n_clusters, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    sq = sq_distances_to(points, centers[:1]).ravel()
    for j in range(1, n_clusters):
        total = sq.sum()
        if total > 0:
            idx = int(rng.choice(n, p=sq / total))
        else:  # all remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        sq = np.minimum(sq, sq_distances_to(points, centers[j : j + 1]).ravel())
    return centers


def _repair_empty(points, centers, assignment, counts, point_sq):
    """Give each empty cluster the point farthest from its own center.

    Donor clusters must keep at least one member. Mutates all arrays in
    place; strictly decreases inertia.
    """
    for k in np.flatnonzero(counts == 0):
        eligible = counts[assignment] > 1
        if not np.any(eligible):
            continue
        candidates = np.where(eligible, point_sq, -np.inf)
        donor_point = int(np.argmax(candidates))
        old = assignment[donor_point]
        counts[old] -= 1
        counts[k] = 1
        assignment[donor_point] = k
        centers[k] = points[donor_point]
        point_sq[donor_point] = 0.0


def kmeans(
    points,
    n_clusters: int,
    seed=0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    n_init: int = 1,
) -> Clustering:
    """Cluster points into ``n_clusters`` groups with seeded Lloyd iterations.

    Stops when the largest coordinate movement of any center falls below
    ``tol`` or after ``max_iter`` iterations. ``seed`` may be an integer
    or a numpy Generator. With ``n_init > 1`` the run restarts from that
    many seedings and keeps the lowest-inertia result (first on ties),
    still deterministic for a given seed.
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if n_clusters < 1:
        raise InfeasibleKError(f"n_clusters must be >= 1, got {n_clusters}")
    n_distinct = np.unique(points, axis=0).shape[0]
    if n_clusters > n_distinct:
        raise InfeasibleKError(
            f"n_clusters={n_clusters} exceeds the {n_distinct} distinct points"
        )
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), "kmeans")
    best = None
    for _ in range(max(1, int(n_init))):
        result = _single_run(points, n_clusters, rng, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _single_run(points, n_clusters, rng, max_iter, tol) -> Clustering:
    n = points.shape[0]
    centers = _plus_plus_init(points, n_clusters, rng)
    trace = []
    n_iter = 0
    for _ in range(max_iter):
        n_iter += 1
        sq = sq_distances_to(points, centers)
        assignment = np.argmin(sq, axis=1)  # ties -> lowest index
        point_sq = sq[np.arange(n), assignment]
        trace.append(float(point_sq.sum()))

        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, points)
        counts = np.bincount(assignment, minlength=n_clusters)
        new_centers = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)
        _repair_empty(points, new_centers, assignment, counts, point_sq)

        movement = np.max(np.abs(new_centers - centers))
        centers = new_centers
        if movement < tol:
            break

    sq = sq_distances_to(points, centers)
    assignment = np.argmin(sq, axis=1)
    inertia = float(sq[np.arange(n), assignment].sum())
    trace.append(inertia)
    return Clustering(
        centers=centers,
        assignment=assignment,
        inertia=inertia,
        inertia_trace=tuple(trace),
        n_iter=n_iter,
    )


def assign_to_nearest(points, centers) -> np.ndarray:
    """Index of the nearest center per point; ties go to the lowest index."""
    points = as_matrix(points, "points")
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise EmptyInputError("centers must be a non-empty 2-d array")
    check_same_dim(points, centers, "points and centers")
    return np.argmin(sq_distances_to(points, centers), axis=1)
