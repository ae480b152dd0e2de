"""Dataset ingestion, synthetic scenario generation, and serialization.

The on-disk embedding format is UTF-8 text: one header line
``dim=<d> count=<n>`` followed by one row per instance,
``<id>\\t<label-or-?>\\t<v1>\\t...\\t<vd>``. Floats are written with
Python's repr, the shortest decimal that round-trips to the same bits.

A dataset directory holds three embedding files (labeled, unlabeled, test)
plus a flat-text manifest listing the file names, the dimension, row
counts, and the category counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import readonly
from .exceptions import (
    DatasetIOError,
    DataWarning,
    DuplicateIdError,
    LabelError,
    MissingLabelError,
    NonFiniteError,
    SchemaError,
    SeparationError,
    ConfigError,
)
from .rng import stream

UNLABELED_SENTINEL = "?"
MAX_CENTER_ATTEMPTS = 10_000

LABELED_FILE = "labeled.tsv"
UNLABELED_FILE = "unlabeled.tsv"
TEST_FILE = "test.tsv"
MANIFEST_FILE = "manifest.txt"


@dataclass(frozen=True)
class LabelSpace:
    """Ordered known and novel category identifiers.

    ``known_ids`` are the categories present in the labeled data;
    ``novel_ids`` are categories expected only in unlabeled/test data
    (empty when unknown).
    """

    known_ids: tuple
    novel_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "known_ids", tuple(self.known_ids))
        object.__setattr__(self, "novel_ids", tuple(self.novel_ids))
        if len(self.known_ids) < 1:
            raise LabelError("at least one known category is required")
        if len(set(self.known_ids)) != len(self.known_ids):
            raise LabelError("known_ids contains duplicates")
        if len(set(self.novel_ids)) != len(self.novel_ids):
            raise LabelError("novel_ids contains duplicates")
        if set(self.known_ids) & set(self.novel_ids):
            raise LabelError("known_ids and novel_ids must be disjoint")

    @property
    def n_known(self) -> int:
        return len(self.known_ids)

    @property
    def n_total(self) -> int:
        return len(self.known_ids) + len(self.novel_ids)

    @property
    def all_ids(self) -> tuple:
        return self.known_ids + self.novel_ids


@dataclass(frozen=True, eq=False)
class Split:
    """One partition of a dataset: ids, a row-per-instance matrix, labels.

    ``y`` is None for splits that carry no labels at all; individual
    entries are never None here (missing labels live in the sidecar
    ground-truth field of Dataset instead).
    """

    ids: tuple
    X: np.ndarray
    y: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise SchemaError(f"split matrix must be 2-d, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("split matrix contains NaN or Inf")
        object.__setattr__(self, "X", readonly(X))
        if len(self.ids) != X.shape[0]:
            raise SchemaError(f"{len(self.ids)} ids for {X.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateIdError("duplicate instance ids within a split")
        if self.y is not None:
            object.__setattr__(self, "y", tuple(self.y))
            if len(self.y) != X.shape[0]:
                raise SchemaError(f"{len(self.y)} labels for {X.shape[0]} rows")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled, unlabeled, and test partitions plus the category space.

    The unlabeled split never exposes labels; its ground truth (when
    available, e.g. for synthetic data) lives in ``unlabeled_truth``,
    which only evaluation code may read. Training code receives the
    label-free arrays via :meth:`training_view`.
    """

    labeled: Split
    unlabeled: Split
    test: Split
    label_space: LabelSpace
    unlabeled_truth: tuple | None = None

    def __post_init__(self):
        if self.labeled.y is None:
            raise MissingLabelError("labeled split must carry labels")
        if self.test.y is None:
            raise MissingLabelError("test split must carry labels")
        if self.unlabeled.y is not None:
            raise SchemaError("unlabeled split must not expose labels; use unlabeled_truth")
        dims = {self.labeled.dim, self.unlabeled.dim, self.test.dim}
        if len(dims) != 1:
            raise SchemaError(f"splits have mismatched dimensions {sorted(dims)}")
        known = set(self.label_space.known_ids)
        bad = [y for y in self.labeled.y if y not in known]
        if bad:
            raise LabelError(f"labeled split contains labels outside known_ids: {sorted(set(bad))[:5]}")
        seen = set(self.labeled.ids)
        for split_name, split in (("unlabeled", self.unlabeled), ("test", self.test)):
            overlap = seen.intersection(split.ids)
            if overlap:
                raise DuplicateIdError(
                    f"ids shared between splits (first in {split_name}): {sorted(overlap)[:5]}"
                )
            seen.update(split.ids)
        if self.unlabeled_truth is not None:
            object.__setattr__(self, "unlabeled_truth", tuple(self.unlabeled_truth))
            if len(self.unlabeled_truth) != len(self.unlabeled):
                raise SchemaError("unlabeled_truth length does not match unlabeled split")
            present = {t for t in self.unlabeled_truth if t is not None}
            missing = known - present
            if missing:
                warnings.warn(
                    "known categories absent from unlabeled ground truth: "
                    + ", ".join(sorted(missing)),
                    DataWarning,
                    stacklevel=2,
                )

    @property
    def dim(self) -> int:
        return self.labeled.dim

    def training_view(self):
        """Arrays the training path is allowed to see: (X_l, y_l, X_u)."""
        return self.labeled.X, self.labeled.y, self.unlabeled.X

    @property
    def has_unlabeled_truth(self) -> bool:
        return self.unlabeled_truth is not None and any(
            t is not None for t in self.unlabeled_truth
        )


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Exact equality of two datasets, including float bits."""

    def split_eq(s, t, ay, by):
        return (
            s.ids == t.ids
            and s.X.shape == t.X.shape
            and np.array_equal(s.X, t.X)
            and ay == by
        )

    return (
        split_eq(a.labeled, b.labeled, a.labeled.y, b.labeled.y)
        and split_eq(a.unlabeled, b.unlabeled, a.unlabeled_truth, b.unlabeled_truth)
        and split_eq(a.test, b.test, a.test.y, b.test.y)
        and a.label_space == b.label_space
    )


# ---------------------------------------------------------------------------
# Embedding file IO


def write_embedding_file(path, ids, X, labels) -> None:
    """Write one embedding file; ``labels`` entries may be None (-> '?')."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if len(ids) != n or len(labels) != n:
        raise SchemaError("ids, labels, and rows must have equal lengths")
    lines = [f"dim={d} count={n}"]
    for row_id, row, label in zip(ids, X, labels):
        text_label = UNLABELED_SENTINEL if label is None else str(label)
        if "\t" in str(row_id) or "\t" in text_label:
            raise SchemaError("ids and labels must not contain tabs")
        lines.append("\t".join([str(row_id), text_label] + [repr(float(v)) for v in row]))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def read_embedding_file(path):
    """Read one embedding file; returns (ids, X, labels) with None for '?'."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not UTF-8 text") from exc
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split()
    try:
        fields = dict(part.split("=", 1) for part in header)
        dim = int(fields["dim"])
        count = int(fields["count"])
    except (ValueError, KeyError) as exc:
        raise SchemaError(f"{path}: bad header {lines[0]!r}") from exc
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != count:
        raise SchemaError(f"{path}: header promises {count} rows, found {len(rows)}")
    ids, labels = [], []
    X = np.empty((count, dim), dtype=np.float64)
    for i, line in enumerate(rows):
        parts = line.split("\t")
        if len(parts) != dim + 2:
            raise SchemaError(
                f"{path}: row {i + 1} has {len(parts) - 2} components, expected {dim}"
            )
        ids.append(parts[0])
        labels.append(None if parts[1] == UNLABELED_SENTINEL else parts[1])
        try:
            X[i] = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise SchemaError(f"{path}: row {i + 1} has a non-numeric component") from exc
    if not np.all(np.isfinite(X)):
        raise SchemaError(f"{path}: non-finite component")
    if len(set(ids)) != len(ids):
        raise DuplicateIdError(f"{path}: duplicate ids within file")
    return ids, X, labels


def load_dataset(labeled_path, unlabeled_path, test_path) -> Dataset:
    """Assemble and validate a Dataset from three embedding files.

    Known categories are the distinct labels of the labeled file, sorted
    lexicographically; novel categories are labels that appear in the
    test file or unlabeled ground truth but not in the labeled file.
    """
    l_ids, l_X, l_y = read_embedding_file(labeled_path)
    u_ids, u_X, u_y = read_embedding_file(unlabeled_path)
    t_ids, t_X, t_y = read_embedding_file(test_path)
    dims = {l_X.shape[1], u_X.shape[1], t_X.shape[1]}
    if len(dims) != 1:
        raise SchemaError(f"embedding files disagree on dim: {sorted(dims)}")
    if any(y is None for y in l_y):
        raise MissingLabelError(f"{labeled_path}: labeled rows must not use '?'")
    if any(y is None for y in t_y):
        raise MissingLabelError(f"{test_path}: test rows must carry ground-truth labels")
    known = sorted(set(l_y))
    observed = set(t_y) | {y for y in u_y if y is not None}
    novel = sorted(observed - set(known))
    truth = tuple(u_y) if any(y is not None for y in u_y) else None
    return Dataset(
        labeled=Split(tuple(l_ids), l_X, tuple(l_y)),
        unlabeled=Split(tuple(u_ids), u_X, None),
        test=Split(tuple(t_ids), t_X, tuple(t_y)),
        label_space=LabelSpace(tuple(known), tuple(novel)),
        unlabeled_truth=truth,
    )


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write the three embedding files plus the manifest; returns its path.

    ``load_manifest(save_dataset(d))`` reproduces ``d`` exactly.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {directory}: {exc}") from exc
    write_embedding_file(
        directory / LABELED_FILE, dataset.labeled.ids, dataset.labeled.X, dataset.labeled.y
    )
    truth = dataset.unlabeled_truth
    if truth is None:
        truth = [None] * len(dataset.unlabeled)
    write_embedding_file(directory / UNLABELED_FILE, dataset.unlabeled.ids, dataset.unlabeled.X, truth)
    write_embedding_file(directory / TEST_FILE, dataset.test.ids, dataset.test.X, dataset.test.y)
    manifest = directory / MANIFEST_FILE
    lines = [
        f"labeled={LABELED_FILE}",
        f"unlabeled={UNLABELED_FILE}",
        f"test={TEST_FILE}",
        f"dim={dataset.dim}",
        f"labeled_count={len(dataset.labeled)}",
        f"unlabeled_count={len(dataset.unlabeled)}",
        f"test_count={len(dataset.test)}",
        f"known_categories={dataset.label_space.n_known}",
        f"total_categories={dataset.label_space.n_total}",
    ]
    try:
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {manifest}: {exc}") from exc
    return manifest


def load_manifest(manifest_path) -> Dataset:
    """Load a dataset directory through its manifest, re-checking counts."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILE
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read {manifest_path}: {exc}") from exc
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{manifest_path}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    root = manifest_path.parent
    for key in ("labeled", "unlabeled", "test"):
        if key not in fields:
            raise SchemaError(f"{manifest_path}: missing {key}= entry")
    dataset = load_dataset(
        root / fields["labeled"], root / fields["unlabeled"], root / fields["test"]
    )
    checks = {
        "dim": dataset.dim,
        "labeled_count": len(dataset.labeled),
        "unlabeled_count": len(dataset.unlabeled),
        "test_count": len(dataset.test),
        "known_categories": dataset.label_space.n_known,
    }
    for key, actual in checks.items():
        if key in fields and int(fields[key]) != actual:
            raise SchemaError(
                f"{manifest_path}: {key}={fields[key]} but loaded dataset has {actual}"
            )
    return dataset


# ---------------------------------------------------------------------------
# Synthetic scenario generation


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for a synthetic Gaussian-mixture discovery scenario.

    ``n_categories`` cluster centers are placed with pairwise distance at
    least ``center_separation``; each category gets ``per_class`` training
    points and ``test_per_class`` held-out test points, all drawn from an
    isotropic Gaussian with ``cluster_std``. The first ``n_known``
    categories (or a seeded random subset when ``known_selection`` is
    "random") are known: a ``labeled_ratio`` fraction of their training
    points forms the labeled split and the rest joins the unlabeled pool
    together with every novel-category point.
    """

    n_categories: int
    n_known: int
    dim: int
    per_class: int = 50
    cluster_std: float = 0.5
    center_separation: float = 8.0
    labeled_ratio: float = 0.5
    seed: int = 0
    test_per_class: int | None = None
    known_selection: str = "first"

    def __post_init__(self):
        if not 1 <= self.n_known <= self.n_categories:
            raise ConfigError(
                f"need 1 <= n_known <= n_categories, got {self.n_known} of {self.n_categories}"
            )
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.per_class < 2:
            raise ConfigError("per_class must be >= 2 so known categories can split")
        if not 0.0 < self.labeled_ratio < 1.0:
            raise ConfigError(f"labeled_ratio must lie strictly in (0, 1), got {self.labeled_ratio}")
        if not self.cluster_std > 0:
            raise ConfigError(f"cluster_std must be positive, got {self.cluster_std}")
        if not self.center_separation > 0:
            raise ConfigError(f"center_separation must be positive, got {self.center_separation}")
        if self.test_per_class is not None and self.test_per_class < 1:
            raise ConfigError(f"test_per_class must be >= 1, got {self.test_per_class}")
        if self.known_selection not in ("first", "random"):
            raise ConfigError(f"known_selection must be 'first' or 'random', got {self.known_selection!r}")

    @property
    def known_ratio(self) -> float:
        return self.n_known / self.n_categories

    @property
    def resolved_test_per_class(self) -> int:
        if self.test_per_class is not None:
            return self.test_per_class
        return max(1, self.per_class // 2)


def _draw_centers(spec: SynthSpec, rng) -> np.ndarray:
    # box side scales with separation and category count so packing stays easy
    side = 2.0 * spec.center_separation * max(2.0, spec.n_categories ** (1.0 / spec.dim))
    centers = np.empty((spec.n_categories, spec.dim))
    placed = 0
    attempts = 0
    min_sq = spec.center_separation**2
    while placed < spec.n_categories:
        if attempts >= MAX_CENTER_ATTEMPTS:
            raise SeparationError(
                f"placed only {placed}/{spec.n_categories} centers after {attempts} attempts; "
                "reduce center_separation or n_categories"
            )
        attempts += 1
        candidate = rng.uniform(-side / 2.0, side / 2.0, size=spec.dim)
        if placed == 0 or np.min(((centers[:placed] - candidate) ** 2).sum(axis=1)) >= min_sq:
            centers[placed] = candidate
            placed += 1
    return centers


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Generate a seeded Gaussian-mixture Dataset per ``spec``.

    Ground-truth labels are retained on the unlabeled rows (sidecar) and
    on the test rows; every known category appears in both the labeled
    and unlabeled splits.
    """
    centers = _draw_centers(spec, stream(spec.seed, "synthetic-centers"))
    point_rng = stream(spec.seed, "synthetic-points")
    width = max(3, len(str(spec.n_categories - 1)))
    names = [f"c{i:0{width}d}" for i in range(spec.n_categories)]

    if spec.known_selection == "random":
        pick = stream(spec.seed, "synthetic-known-selection")
        known_idx = sorted(pick.choice(spec.n_categories, size=spec.n_known, replace=False).tolist())
    else:
        known_idx = list(range(spec.n_known))
    known_set = set(known_idx)
    known_ids = tuple(names[i] for i in known_idx)
    novel_ids = tuple(names[i] for i in range(spec.n_categories) if i not in known_set)

    n_labeled_per_class = int(round(spec.labeled_ratio * spec.per_class))
    n_labeled_per_class = min(max(n_labeled_per_class, 1), spec.per_class - 1)

    lab_X, lab_y = [], []
    unl_X, unl_y = [], []
    test_X, test_y = [], []
    n_test = spec.resolved_test_per_class
    for k in range(spec.n_categories):
        pts = centers[k] + spec.cluster_std * point_rng.standard_normal((spec.per_class, spec.dim))
        tpts = centers[k] + spec.cluster_std * point_rng.standard_normal((n_test, spec.dim))
        if k in known_set:
            lab_X.append(pts[:n_labeled_per_class])
            lab_y.extend([names[k]] * n_labeled_per_class)
            unl_X.append(pts[n_labeled_per_class:])
            unl_y.extend([names[k]] * (spec.per_class - n_labeled_per_class))
        else:
            unl_X.append(pts)
            unl_y.extend([names[k]] * spec.per_class)
        test_X.append(tpts)
        test_y.extend([names[k]] * n_test)

    lab_X = np.concatenate(lab_X)
    unl_X = np.concatenate(unl_X)
    test_X = np.concatenate(test_X)

    shuffle_rng = stream(spec.seed, "synthetic-shuffle")
    lab_order = shuffle_rng.permutation(len(lab_X))
    unl_order = shuffle_rng.permutation(len(unl_X))
    test_order = shuffle_rng.permutation(len(test_X))
    lab_X, lab_y = lab_X[lab_order], [lab_y[i] for i in lab_order]
    unl_X, unl_y = unl_X[unl_order], [unl_y[i] for i in unl_order]
    test_X, test_y = test_X[test_order], [test_y[i] for i in test_order]

    return Dataset(
        labeled=Split(tuple(f"L{i:05d}" for i in range(len(lab_X))), lab_X, tuple(lab_y)),
        unlabeled=Split(tuple(f"U{i:05d}" for i in range(len(unl_X))), unl_X, None),
        test=Split(tuple(f"T{i:05d}" for i in range(len(test_X))), test_X, tuple(test_y)),
        label_space=LabelSpace(known_ids, novel_ids),
        unlabeled_truth=tuple(unl_y),
    )
