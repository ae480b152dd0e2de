"""Shared independent oracles for the test suite.

These deliberately recompute results by the dumbest correct method
(enumeration, finite differences, high-precision summation) so they stay
independent of the implementation paths they check.
"""

import itertools
import math

import numpy as np


def finite_difference_gradient(f, X, step=1e-5):
    """Central-difference gradient of scalar f at X, coordinate by coordinate."""
    X = np.asarray(X, dtype=np.float64)
    grad = np.zeros_like(X)
    flat = grad.ravel()
    for i in range(X.size):
        plus = X.copy()
        minus = X.copy()
        plus.ravel()[i] += step
        minus.ravel()[i] -= step
        flat[i] = (f(plus) - f(minus)) / (2.0 * step)
    return grad


def relative_error(a, b):
    """Norm-based relative error with an absolute floor.

    The floor matches what central differences at step 1e-5 can resolve:
    below it, both gradients are numerically zero and count as equal.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)
    return np.linalg.norm(a - b) / denom


def brute_force_assignment(cost):
    """Exhaustive minimum-cost injective row->column map (rows <= cols)."""
    cost = np.asarray(cost, dtype=np.float64)
    n_rows, n_cols = cost.shape
    best_cols, best_total = None, None
    for cols in itertools.permutations(range(n_cols), n_rows):
        total = 0.0
        for i, j in enumerate(cols):
            total += float(cost[i, j])
        if best_total is None or total < best_total:
            best_cols, best_total = cols, total
    return best_cols, best_total


def brute_force_accuracy(truth, predicted):
    """Exhaustive maximum-agreement accuracy between labels and clusters."""
    truth = list(truth)
    predicted = list(predicted)
    labels = sorted(set(truth))
    clusters = sorted(set(predicted))
    counts = {}
    for t, c in zip(truth, predicted):
        counts[(c, t)] = counts.get((c, t), 0) + 1
    best = 0
    if len(clusters) <= len(labels):
        for chosen in itertools.permutations(labels, len(clusters)):
            agree = sum(counts.get((c, lab), 0) for c, lab in zip(clusters, chosen))
            best = max(best, agree)
    else:
        for chosen in itertools.permutations(clusters, len(labels)):
            agree = sum(counts.get((c, lab), 0) for c, lab in zip(chosen, labels))
            best = max(best, agree)
    return best / len(truth)


def fsum_euclidean(a, b):
    return math.sqrt(math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def random_nonzero_matrix(rng, n, d, scale=2.0, min_norm=0.3):
    """Random rows bounded away from the origin (cosine kernels need that)."""
    while True:
        M = rng.normal(scale=scale, size=(n, d))
        norms = np.linalg.norm(M, axis=1)
        if np.all(norms > min_norm):
            return M
