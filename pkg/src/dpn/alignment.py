"""Category prototypes, minimum-cost prototype matching, and decoupling.

Labeled prototypes are per-category means of labeled embeddings; unlabeled
prototypes are per-cluster means. Matching the two sets by Euclidean cost
identifies which unlabeled clusters are known categories (matched) and
which are novel (unmatched), and splits the unlabeled instances
accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import as_matrix, readonly
from .exceptions import (
    DatasetIOError,
    DimensionError,
    EmptyClusterError,
    MissingCategoryError,
    ShapeError,
)
from .kernels import euclidean_distance
from .kmeans import Clustering


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """An ordered stack of category prototype vectors.

    ``category_ids`` names the category behind each row for labeled sets;
    unlabeled sets leave it None (rows are cluster indices).
    """

    vectors: np.ndarray
    kind: str
    category_ids: tuple | None = None

    def __post_init__(self):
        v = as_matrix(self.vectors, "prototypes")
        object.__setattr__(self, "vectors", readonly(v))
        if self.kind not in ("labeled", "unlabeled"):
            raise ShapeError(f"kind must be 'labeled' or 'unlabeled', got {self.kind!r}")
        if self.category_ids is not None:
            object.__setattr__(self, "category_ids", tuple(self.category_ids))
            if len(self.category_ids) != v.shape[0]:
                raise ShapeError("one category id per prototype row is required")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def labeled_prototypes(X, y, label_space) -> PrototypeSet:
    """Mean embedding per known category, ordered by ``label_space.known_ids``."""
    X = as_matrix(X, "X")
    y = list(y)
    if len(y) != X.shape[0]:
        raise ShapeError(f"{len(y)} labels for {X.shape[0]} rows")
    rows = np.empty((label_space.n_known, X.shape[1]))
    for j, cat in enumerate(label_space.known_ids):
        members = [i for i, label in enumerate(y) if label == cat]
        if not members:
            raise MissingCategoryError(f"category {cat!r} has no labeled instances")
        rows[j] = X[members].mean(axis=0)
    return PrototypeSet(rows, kind="labeled", category_ids=label_space.known_ids)


def unlabeled_prototypes(X, clustering: Clustering) -> PrototypeSet:
    """Mean embedding per cluster, ordered by cluster index."""
    X = as_matrix(X, "X")
    if X.shape[0] != clustering.assignment.shape[0]:
        raise ShapeError("clustering does not cover the given points")
    rows = np.empty((clustering.n_clusters, X.shape[1]))
    for j in range(clustering.n_clusters):
        members = clustering.members(j)
        if members.size == 0:
            raise EmptyClusterError(f"cluster {j} is empty")
        rows[j] = X[members].mean(axis=0)
    return PrototypeSet(rows, kind="unlabeled")


@dataclass(frozen=True, eq=False)
class PrototypeMatch:
    """Optimal injective map from labeled to unlabeled prototypes.

    ``permutation[i]`` is the unlabeled prototype matched to labeled
    prototype ``i``; ``matched`` repeats it in labeled order and
    ``unmatched`` lists the remaining unlabeled indices ascending.
    """

    permutation: tuple
    total_cost: float
    matched: tuple
    unmatched: tuple
    cost_matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cost_matrix", readonly(np.asarray(self.cost_matrix)))

    @property
    def n_labeled(self) -> int:
        return len(self.permutation)

    @property
    def n_unlabeled(self) -> int:
        return self.cost_matrix.shape[1]

    def matched_distances(self) -> np.ndarray:
        return self.cost_matrix[np.arange(self.n_labeled), list(self.permutation)]


# Relative slack used to treat assignment completions as cost ties when
# selecting the lexicographically smallest optimum.
_TIE_RTOL = 1e-9


def minimum_cost_assignment(cost: np.ndarray) -> tuple:
    """Minimum-cost injective row->column assignment of a rows<=cols matrix.

    Returns (columns, total) where columns[i] is the column assigned to
    row i. Among cost ties the lexicographically smallest column sequence
    is chosen, which makes downstream decoupling reproducible.
    """
    cost = as_matrix(cost, "cost")
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise ShapeError(f"assignment needs rows <= cols, got {cost.shape}")
    row_ind, col_ind = linear_sum_assignment(cost)
    optimum = float(cost[row_ind, col_ind].sum())
    tol = _TIE_RTOL * max(1.0, abs(optimum))

    available = list(range(n_cols))
    chosen = []
    target = optimum
    for i in range(n_rows):
        rest_rows = np.arange(i + 1, n_rows)
        best_col = None
        best_value = None
        rest_of_best = 0.0
        for j in available:
            if n_rows - i - 1 > 0:
                rest_cols = [c for c in available if c != j]
                sub = cost[np.ix_(rest_rows, rest_cols)]
                r, c = linear_sum_assignment(sub)
                rest = float(sub[r, c].sum())
            else:
                rest = 0.0
            value = cost[i, j] + rest
            if best_value is None or value < best_value - tol:
                best_col, best_value, rest_of_best = j, value, rest
            if value <= target + tol:
                # first column (ascending) achieving the optimum: commit
                best_col, rest_of_best = j, rest
                break
        chosen.append(best_col)
        available.remove(best_col)
        target = rest_of_best
    total = 0.0
    for i, j in enumerate(chosen):
        total += float(cost[i, j])
    return tuple(chosen), total


def match_prototypes(labeled: PrototypeSet, unlabeled: PrototypeSet) -> PrototypeMatch:
    """Match labeled to unlabeled prototypes by minimum total Euclidean cost.

    Requires len(labeled) <= len(unlabeled); the surplus unlabeled
    prototypes end up unmatched and are treated as novel categories.
    """
    if labeled.dim != unlabeled.dim:
        raise DimensionError(
            f"prototype sets have mismatched dims {labeled.dim} and {unlabeled.dim}"
        )
    m, k = len(labeled), len(unlabeled)
    if m > k:
        raise ShapeError(f"more labeled prototypes ({m}) than unlabeled ({k})")
    cost = np.empty((m, k))
    for i in range(m):
        for j in range(k):
            cost[i, j] = euclidean_distance(labeled.vectors[i], unlabeled.vectors[j])
    permutation, total = minimum_cost_assignment(cost)
    unmatched = tuple(sorted(set(range(k)) - set(permutation)))
    return PrototypeMatch(
        permutation=permutation,
        total_cost=total,
        matched=permutation,
        unmatched=unmatched,
        cost_matrix=cost,
    )


@dataclass(frozen=True, eq=False)
class Decoupling:
    """Split of the unlabeled instances into known and novel parts.

    ``known_indices`` / ``novel_indices`` index rows of the unlabeled
    split. Each known instance carries the category id its cluster was
    matched to and the position of that cluster in matched order; each
    novel instance carries the position of its cluster in unmatched order.
    """

    known_indices: np.ndarray
    known_category_ids: tuple
    known_prototype_pos: np.ndarray
    novel_indices: np.ndarray
    novel_prototype_pos: np.ndarray

    def __post_init__(self):
        for name in ("known_indices", "known_prototype_pos", "novel_indices", "novel_prototype_pos"):
            object.__setattr__(self, name, readonly(np.asarray(getattr(self, name), dtype=np.intp)))
        object.__setattr__(self, "known_category_ids", tuple(self.known_category_ids))

    @property
    def n_known(self) -> int:
        return self.known_indices.shape[0]

    @property
    def n_novel(self) -> int:
        return self.novel_indices.shape[0]


def decouple(match: PrototypeMatch, clustering: Clustering, known_ids) -> Decoupling:
    """Partition unlabeled instances by whether their cluster was matched."""
    known_ids = tuple(known_ids)
    if len(known_ids) != match.n_labeled:
        raise ShapeError("one known category id per matched prototype is required")
    cluster_to_pos = {c: i for i, c in enumerate(match.matched)}
    unmatched_pos = {c: i for i, c in enumerate(match.unmatched)}
    assignment = clustering.assignment
    known_mask = np.isin(assignment, list(match.matched))
    known_indices = np.flatnonzero(known_mask)
    novel_indices = np.flatnonzero(~known_mask)
    known_pos = np.array([cluster_to_pos[c] for c in assignment[known_indices]], dtype=np.intp)
    novel_pos = np.array([unmatched_pos[c] for c in assignment[novel_indices]], dtype=np.intp)
    tags = tuple(known_ids[p] for p in known_pos)
    return Decoupling(
        known_indices=known_indices,
        known_category_ids=tags,
        known_prototype_pos=known_pos,
        novel_indices=novel_indices,
        novel_prototype_pos=novel_pos,
    )


def prototype_distance_matrix(labeled: PrototypeSet, aligned_unlabeled: PrototypeSet) -> np.ndarray:
    """Pairwise Euclidean distances between equally sized prototype sets.

    ``aligned_unlabeled`` must hold the matched unlabeled prototypes in
    matched order, so the diagonal carries the matched-pair distances.
    """
    if len(labeled) != len(aligned_unlabeled):
        raise ShapeError(
            f"aligned sets must have equal size, got {len(labeled)} and {len(aligned_unlabeled)}"
        )
    if labeled.dim != aligned_unlabeled.dim:
        raise DimensionError("prototype sets have mismatched dims")
    m = len(labeled)
    out = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            out[i, j] = euclidean_distance(labeled.vectors[i], aligned_unlabeled.vectors[j])
    return out


def save_distance_matrix(path, matrix: np.ndarray, row_ids=None, col_ids=None) -> None:
    """Write a distance matrix as a TSV grid with optional headers."""
    matrix = np.asarray(matrix)
    lines = []
    if col_ids is not None:
        lines.append("\t".join([""] + [str(c) for c in col_ids]))
    for i, row in enumerate(matrix):
        prefix = [str(row_ids[i])] if row_ids is not None else []
        lines.append("\t".join(prefix + [repr(float(v)) for v in row]))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc
