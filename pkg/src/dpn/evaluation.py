"""Matched clustering accuracy, category-count estimation, and reports.

Accuracy follows the standard protocol: cluster the test embeddings,
solve a maximum-agreement assignment between clusters and ground-truth
labels, then score all instances under that single global mapping. Known
and novel sub-accuracies reuse the same mapping so the counts add up
exactly; a per-subset remapping variant exists behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import as_matrix, readonly
from .exceptions import DatasetIOError, EvalDataError, InfeasibleKError, ConfigError, ShapeError
from .kmeans import kmeans
from .rng import stream
from .training import TrainState

# Published full-scale results for this method (BERT fine-tuning on the
# original corpora); recorded for context only, not reproducible here.
FULL_SCALE_REFERENCES = (
    ("BANKING", 72.96, 80.93, 48.60),
    ("StackOverflow", 84.23, 85.29, 81.07),
    ("CLINC", 89.06, 92.97, 77.54),
)
FULL_SCALE_K_ESTIMATES = (
    ("CLINC", 137, 150, 8.7),
    ("BANKING", 67, 77, 13.0),
    ("StackOverflow", 18, 20, 10.0),
)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Accuracies, counts, the cluster-label mapping, and side artifacts."""

    acc_all: float
    acc_known: float
    acc_novel: float
    n_all: int
    n_known: int
    n_novel: int
    correct_all: int
    correct_known: int
    correct_novel: int
    mapping: tuple  # cluster index -> label (None when unmapped)
    label_order: tuple
    confusion: np.ndarray
    prototype_distances: np.ndarray
    matched_distance_outliers: tuple
    estimated_k: int | None = None
    loss_trace: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "confusion", readonly(np.asarray(self.confusion)))
        object.__setattr__(
            self, "prototype_distances", readonly(np.asarray(self.prototype_distances))
        )


def clustering_accuracy(truth, predicted):
    """Accuracy of cluster indices against labels under the best mapping.

    Builds the cluster-by-label contingency table, solves the
    maximum-agreement injective assignment (on the smaller side), and
    returns ``(accuracy, mapping)`` where mapping sends cluster indices to
    labels (clusters left unmapped are absent).
    """
    truth = list(truth)
    predicted = np.asarray(predicted, dtype=np.intp)
    if len(truth) != predicted.shape[0]:
        raise ShapeError(f"{len(truth)} labels vs {predicted.shape[0]} predictions")
    if len(truth) == 0:
        raise ShapeError("need at least one instance")
    labels = sorted(set(truth))
    label_pos = {lab: i for i, lab in enumerate(labels)}
    clusters = sorted(set(predicted.tolist()))
    cluster_pos = {c: i for i, c in enumerate(clusters)}
    table = np.zeros((len(clusters), len(labels)), dtype=np.int64)
    for lab, c in zip(truth, predicted):
        table[cluster_pos[c], label_pos[lab]] += 1
    # pad to square so the assignment is total on the smaller side
    side = max(table.shape)
    padded = np.zeros((side, side), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    mapping = {}
    correct = 0
    for r, c in zip(rows, cols):
        if r < len(clusters) and c < len(labels):
            mapping[clusters[r]] = labels[c]
            correct += int(table[r, c])
    return correct / len(truth), mapping


def estimate_k(
    X,
    k_max: int,
    threshold_factor: float = 0.5,
    seed: int = 0,
    method: str = "inertia",
) -> int:
    """Estimate the number of categories in ``X``; result lies in [1, k_max].

    method="inertia" (default): run seeded k-means for every k up to
    ``k_max`` and return the largest k whose inertia is below
    ``threshold_factor`` times the inertia at k-1, i.e. counting clusters
    for as long as adding one still collapses a well-separated group.

    method="size": cluster once with ``k_max`` and count clusters whose
    size reaches ``threshold_factor * (n / k_max)``. This is the classic
    drop-small-clusters rule; it needs uneven cluster densities to shed
    the surplus clusters and overcounts on balanced data, so it is not
    the default.
    """
    X = as_matrix(X, "X")
    n = X.shape[0]
    if k_max < 2:
        raise ConfigError(f"k_max must be >= 2, got {k_max}")
    if not 0.0 < threshold_factor < 1.0:
        raise ConfigError(f"threshold_factor must lie in (0, 1), got {threshold_factor}")
    if n < k_max:
        raise InfeasibleKError(f"{n} instances cannot support k_max={k_max}")
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < k_max:
        raise InfeasibleKError(f"only {n_distinct} distinct points for k_max={k_max}")

    if method == "size":
        clustering = kmeans(X, k_max, seed=stream(seed, "estimate-k-size"), n_init=10)
        threshold = threshold_factor * (n / k_max)
        surviving = int((clustering.sizes() >= threshold).sum())
        return max(1, surviving)
    if method != "inertia":
        raise ConfigError(f"method must be 'inertia' or 'size', got {method!r}")

    best = 1
    previous = None
    for k in range(1, k_max + 1):
        clustering = kmeans(X, k, seed=stream(seed, f"estimate-k-{k}"), n_init=10)
        inertia = clustering.inertia
        if previous is not None and previous > 0.0 and inertia < threshold_factor * previous:
            best = k
        previous = inertia
    return best


def _subset_accuracy(truth, predicted_labels, mask):
    count = int(mask.sum())
    if count == 0:
        return 1.0, 0, 0  # vacuous
    correct = sum(
        1 for i in np.flatnonzero(mask) if predicted_labels[i] == truth[i]
    )
    return correct / count, correct, count


def evaluate(
    state: TrainState,
    test_split,
    label_space=None,
    *,
    unlabeled_X=None,
    estimate_categories: bool = False,
    k_max: int | None = None,
) -> EvalReport:
    """Embed the test split, cluster it, and score against ground truth.

    ``estimate_categories`` additionally estimates the category count from
    ``unlabeled_X`` (embedded through the trained head); it requires
    ``k_max`` or a k_max in the state's config.
    """
    label_space = label_space if label_space is not None else state.label_space
    if test_split.y is None:
        raise EvalDataError("test split carries no ground-truth labels")
    truth = list(test_split.y)
    config = state.config

    Z = state.head.forward(test_split.X)
    clustering = kmeans(
        Z,
        state.n_clusters,
        seed=stream(config.seed, "evaluation-clustering"),
        max_iter=config.kmeans_max_iter,
        tol=config.kmeans_tol,
        n_init=config.kmeans_n_init,
    )
    predicted = clustering.assignment
    acc_all, mapping = clustering_accuracy(truth, predicted)
    predicted_labels = [mapping.get(int(c)) for c in predicted]
    correct_all = sum(1 for p, t in zip(predicted_labels, truth) if p == t)

    known = set(label_space.known_ids)
    known_mask = np.array([t in known for t in truth], dtype=bool)
    if config.per_subset_mapping:
        # remaps each subset separately; breaks the exact additivity of counts
        acc_known, correct_known, n_known = _remapped_subset(truth, predicted, known_mask)
        acc_novel, correct_novel, n_novel = _remapped_subset(truth, predicted, ~known_mask)
    else:
        acc_known, correct_known, n_known = _subset_accuracy(truth, predicted_labels, known_mask)
        acc_novel, correct_novel, n_novel = _subset_accuracy(truth, predicted_labels, ~known_mask)

    label_order = list(label_space.all_ids) + sorted(set(truth) - set(label_space.all_ids))
    confusion = _confusion_after_mapping(truth, predicted, mapping, label_order)

    aligned = state.unlabeled_prototypes.vectors[list(state.match.matched)]
    from .alignment import PrototypeSet, prototype_distance_matrix

    proto_dist = prototype_distance_matrix(
        state.labeled_prototypes,
        PrototypeSet(aligned, kind="unlabeled"),
    )
    matched_distances = np.diag(proto_dist)
    median = float(np.median(matched_distances)) if matched_distances.size else 0.0
    outliers = tuple(
        int(i) for i, d in enumerate(matched_distances) if median > 0.0 and d > 3.0 * median
    )

    estimated = None
    if estimate_categories:
        if unlabeled_X is None:
            raise EvalDataError("estimating the category count requires the unlabeled vectors")
        limit = k_max if k_max is not None else config.k_max
        if limit is None:
            raise ConfigError("estimating the category count requires k_max")
        estimated = estimate_k(
            state.head.forward(np.asarray(unlabeled_X, dtype=np.float64)),
            k_max=limit,
            threshold_factor=config.threshold_factor,
            seed=config.seed,
        )

    return EvalReport(
        acc_all=acc_all,
        acc_known=acc_known,
        acc_novel=acc_novel,
        n_all=len(truth),
        n_known=n_known,
        n_novel=n_novel,
        correct_all=correct_all,
        correct_known=correct_known,
        correct_novel=correct_novel,
        mapping=tuple(mapping.get(c) for c in range(state.n_clusters)),
        label_order=tuple(label_order),
        confusion=confusion,
        prototype_distances=proto_dist,
        matched_distance_outliers=outliers,
        estimated_k=estimated,
        loss_trace=tuple(state.loss_trace),
    )


def _remapped_subset(truth, predicted, mask):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return 1.0, 0, 0
    sub_truth = [truth[i] for i in idx]
    acc, sub_map = clustering_accuracy(sub_truth, predicted[idx])
    correct = sum(1 for i in idx if sub_map.get(int(predicted[i])) == truth[i])
    return acc, correct, int(idx.size)


def _confusion_after_mapping(truth, predicted, mapping, label_order):
    pos = {lab: i for i, lab in enumerate(label_order)}
    unmapped_col = len(label_order)
    table = np.zeros((len(label_order), len(label_order) + 1), dtype=np.int64)
    for t, c in zip(truth, predicted):
        lab = mapping.get(int(c))
        col = pos[lab] if lab in pos else unmapped_col
        table[pos[t], col] += 1
    return table


# ---------------------------------------------------------------------------
# Report writers (all output is deterministic: no timestamps)


def write_metrics_tsv(path, report: EvalReport) -> None:
    rows = [
        ("acc_all", repr(report.acc_all)),
        ("acc_known", repr(report.acc_known)),
        ("acc_novel", repr(report.acc_novel)),
        ("n_all", str(report.n_all)),
        ("n_known", str(report.n_known)),
        ("n_novel", str(report.n_novel)),
        ("correct_all", str(report.correct_all)),
        ("correct_known", str(report.correct_known)),
        ("correct_novel", str(report.correct_novel)),
    ]
    if report.estimated_k is not None:
        rows.append(("estimated_k", str(report.estimated_k)))
    lines = ["metric\tvalue"] + [f"{k}\t{v}" for k, v in rows]
    _write(path, lines)


def write_confusion_tsv(path, report: EvalReport) -> None:
    header = ["true\\pred"] + [str(l) for l in report.label_order] + ["(unmapped)"]
    lines = ["\t".join(header)]
    for lab, row in zip(report.label_order, report.confusion):
        lines.append("\t".join([str(lab)] + [str(int(v)) for v in row]))
    _write(path, lines)


def write_report_text(path, report: EvalReport) -> None:
    lines = [
        "category discovery evaluation",
        "=============================",
        "",
        f"instances: {report.n_all} total, {report.n_known} known, {report.n_novel} novel",
        f"accuracy (all):   {report.acc_all:.4f}",
        f"accuracy (known): {report.acc_known:.4f}",
        f"accuracy (novel): {report.acc_novel:.4f}",
    ]
    if report.estimated_k is not None:
        lines.append(f"estimated category count: {report.estimated_k}")
    lines.append("")
    lines.append("test clustering, cluster -> label mapping:")
    for c, lab in enumerate(report.mapping):
        lines.append(f"  {c}: {lab if lab is not None else '(novel/unmapped)'}")
    if report.matched_distance_outliers:
        lines.append("")
        lines.append(
            "warning: matched prototype distances over 3x the median for "
            "labeled prototypes " + ", ".join(str(i) for i in report.matched_distance_outliers)
        )
    lines += [
        "",
        "reference results from published full-scale benchmark runs",
        "(BERT fine-tuning on the original corpora; not reproducible at this scale):",
    ]
    for name, a, k, n in FULL_SCALE_REFERENCES:
        lines.append(f"  {name}: all {a:.2f}  known {k:.2f}  novel {n:.2f}")
    lines.append("  category-count estimation (estimated/true, error):")
    for name, est, true, err in FULL_SCALE_K_ESTIMATES:
        lines.append(f"    {name}: {est}/{true} ({err:.1f}%)")
    _write(path, lines)


def _write(path, lines) -> None:
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc
