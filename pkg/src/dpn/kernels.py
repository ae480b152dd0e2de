"""Distance and similarity kernels plus the shared stabilized softmax.

All kernels are pure, deterministic functions over 64-bit floats.
"""

import math

import numpy as np

from ._validation import as_vector, check_same_dim
from .exceptions import EmptyInputError, NonFiniteError, ZeroNormError


def euclidean_distance(a, b) -> float:
    """L2 distance between two vectors of equal dimension."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b, "a and b")
    d = a - b
    return math.sqrt(float(np.dot(d, d)))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two non-zero vectors, in [-1, 1]."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b, "a and b")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity is undefined for zero-norm vectors")
    c = float(np.dot(a, b)) / (na * nb)
    # clamp numerical spill just outside [-1, 1]
    return min(1.0, max(-1.0, c))


def softmax(scores) -> np.ndarray:
    """Stabilized softmax of a score sequence.

    Subtracts the maximum before exponentiating, so the result is invariant
    under adding a constant to all scores and never overflows.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise EmptyInputError("softmax requires a non-empty 1-d score sequence")
    if not np.all(np.isfinite(s)):
        raise NonFiniteError("softmax scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax of a 2-d score array."""
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise stabilized log-softmax of a 2-d score array."""
    m = scores.max(axis=1, keepdims=True)
    shifted = scores - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def sq_distances_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from each point to each center.

    Computed from explicit coordinate differences (not the expanded dot
    form) so exact ties stay exact and nearby points lose no precision.
    """
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def distances_to(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Euclidean distances from each point to each center."""
    return np.sqrt(sq_distances_to(points, centers))
