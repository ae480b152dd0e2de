"""Training loop: loss composition, gradient descent, prototype updates.

The run proceeds in the fixed order: embed, cluster the unlabeled data,
build both prototype sets, match and decouple, then iterate full-batch
gradient descent on the combined loss. Labeled prototypes are refreshed
each epoch through an exponential moving average; unlabeled prototypes
and the decoupling stay fixed (unless the periodic re-matching or
re-clustering study knobs are enabled).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._version import __version__ as _version
from .alignment import (
    Decoupling,
    PrototypeMatch,
    PrototypeSet,
    decouple,
    labeled_prototypes,
    match_prototypes,
    unlabeled_prototypes,
)
from .config import Config
from .data import Dataset, LabelSpace
from .exceptions import ConfigError, DatasetIOError, DataWarning, LabelError, SchemaError, ShapeError
from .head import ProjectionHead, identity_head, random_head
from .kmeans import Clustering, kmeans
from .losses import (
    hard_assignment_loss,
    linear_cross_entropy,
    prototype_cross_entropy,
    prototype_regularization_loss,
    soft_assignment_loss,
)
from .rng import stream


@dataclass(frozen=True)
class LossBreakdown:
    """Per-epoch loss terms.

    ``known_total = soft_known + cross_entropy + gamma * regularizer`` and
    ``total = soft_novel + known_total``; ablation flags zero individual
    terms. Under the no-decoupling ablation the single coupled soft term
    over all unlabeled data is booked as ``soft_novel``.
    """

    soft_novel: float
    soft_known: float
    cross_entropy: float
    regularizer: float
    known_total: float
    total: float

    @classmethod
    def assemble(cls, soft_novel, soft_known, cross_entropy, regularizer, gamma):
        known_total = soft_known + cross_entropy + gamma * regularizer
        return cls(
            soft_novel=soft_novel,
            soft_known=soft_known,
            cross_entropy=cross_entropy,
            regularizer=regularizer,
            known_total=known_total,
            total=soft_novel + known_total,
        )


TRACE_COLUMNS = (
    "epoch",
    "soft_novel",
    "soft_known",
    "cross_entropy",
    "regularizer",
    "known_total",
    "total",
)


@dataclass
class TrainState:
    """Everything a finished (or resumed) run needs for evaluation.

    ``unlabeled_prototypes`` is frozen at construction; ``clustering`` and
    ``decoupling`` are None on states loaded from a checkpoint.
    """

    head: ProjectionHead
    labeled_prototypes: PrototypeSet
    unlabeled_prototypes: PrototypeSet
    match: PrototypeMatch
    label_space: LabelSpace
    config: Config
    epoch: int = 0
    loss_trace: tuple = ()
    decoupling: Decoupling | None = None
    clustering: Clustering | None = None
    ce_weights: np.ndarray | None = None
    ce_bias: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.unlabeled_prototypes)


def ema_update(old, new, alpha: float):
    """Convex combination keeping ``alpha`` of the old prototypes.

    Accepts matching ndarrays or PrototypeSets and returns the same type.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(old, PrototypeSet) and isinstance(new, PrototypeSet):
        if old.vectors.shape != new.vectors.shape:
            raise ShapeError("prototype sets have mismatched shapes")
        blended = alpha * old.vectors + (1.0 - alpha) * new.vectors
        return PrototypeSet(blended, kind=old.kind, category_ids=old.category_ids)
    old_arr = np.asarray(old, dtype=np.float64)
    new_arr = np.asarray(new, dtype=np.float64)
    if old_arr.shape != new_arr.shape:
        raise ShapeError(f"shapes {old_arr.shape} and {new_arr.shape} do not match")
    return alpha * old_arr + (1.0 - alpha) * new_arr


def total_loss(
    head: ProjectionHead,
    X_labeled,
    label_idx,
    X_unlabeled,
    decoupling: Decoupling,
    cluster_assignment,
    labeled_protos: PrototypeSet,
    unlabeled_protos: PrototypeSet,
    match: PrototypeMatch,
    config: Config,
    ce_weights=None,
    ce_bias=None,
):
    """Compose the full objective and its parameter gradients.

    Returns ``(breakdown, grads)`` where ``grads`` maps "weights"/"bias"
    (and "ce_weights"/"ce_bias" for the linear classifier option) to
    arrays shaped like the corresponding parameters.
    """
    Z_l = head.forward(X_labeled)
    Z_u = head.forward(X_unlabeled)
    dZ_l = np.zeros_like(Z_l)
    dZ_u = np.zeros_like(Z_u)
    grads = {}

    soft_kwargs = dict(
        semantic_weights=not config.ablated("no_semantic_weights"),
        detach_weights=config.detach_weights,
    )
    hard = config.ablated("no_soft_assignment")

    soft_novel = 0.0
    soft_known = 0.0
    reg_value = 0.0

    if config.ablated("no_decouple"):
        protos = unlabeled_protos.vectors
        if hard:
            value, g = hard_assignment_loss(Z_u, cluster_assignment, protos)
        else:
            value, g = soft_assignment_loss(Z_u, protos, config.tau, **soft_kwargs)
        soft_novel = value
        dZ_u += g
    else:
        novel_rows = decoupling.novel_indices
        unmatched = list(match.unmatched)
        if len(unmatched) > 0 and novel_rows.size > 0:
            protos = unlabeled_protos.vectors[unmatched]
            if hard:
                value, g = hard_assignment_loss(
                    Z_u[novel_rows], decoupling.novel_prototype_pos, protos
                )
            else:
                value, g = soft_assignment_loss(Z_u[novel_rows], protos, config.tau, **soft_kwargs)
            soft_novel = value
            dZ_u[novel_rows] += g
        elif len(unmatched) > 0:
            warnings.warn(
                "no unlabeled instances fell into novel clusters; novel loss is 0",
                DataWarning,
                stacklevel=2,
            )

        known_rows = decoupling.known_indices
        if known_rows.size > 0:
            protos = unlabeled_protos.vectors[list(match.matched)]
            if hard:
                value, g = hard_assignment_loss(
                    Z_u[known_rows], decoupling.known_prototype_pos, protos
                )
            else:
                value, g = soft_assignment_loss(Z_u[known_rows], protos, config.tau, **soft_kwargs)
            soft_known = value
            dZ_u[known_rows] += g

            reg_value, reg_grad = prototype_regularization_loss(
                Z_u[known_rows], labeled_protos.vectors, config.tau
            )
            if config.gamma != 0.0:
                dZ_u[known_rows] += config.gamma * reg_grad

    ce_value = 0.0
    if not config.ablated("no_ce"):
        label_idx = np.asarray(label_idx, dtype=np.intp)
        if config.ce_head == "linear":
            ce_value, g, g_cw, g_cb = linear_cross_entropy(Z_l, label_idx, ce_weights, ce_bias)
            grads["ce_weights"] = g_cw
            grads["ce_bias"] = g_cb
        else:
            ce_value, g = prototype_cross_entropy(
                Z_l, label_idx, labeled_protos.vectors, config.tau
            )
        dZ_l += g

    gW_u, gb_u = head.backward(np.asarray(X_unlabeled, dtype=np.float64), Z_u, dZ_u)
    gW_l, gb_l = head.backward(np.asarray(X_labeled, dtype=np.float64), Z_l, dZ_l)
    grads["weights"] = gW_u + gW_l
    grads["bias"] = gb_u + gb_l

    gamma = 0.0 if config.ablated("no_decouple") else config.gamma
    breakdown = LossBreakdown.assemble(soft_novel, soft_known, ce_value, reg_value, gamma)
    return breakdown, grads


def _resolve_n_clusters(config: Config, X_unlabeled, n_known: int) -> int:
    if config.n_clusters == "estimate":
        if config.k_max is None:
            raise ConfigError("n_clusters='estimate' requires k_max")
        from .evaluation import estimate_k  # local import avoids a module cycle

        k = estimate_k(
            X_unlabeled,
            k_max=config.k_max,
            threshold_factor=config.threshold_factor,
            seed=config.seed,
        )
        k = max(k, n_known)
    else:
        k = int(config.n_clusters)
    if k < n_known:
        raise ConfigError(
            f"n_clusters={k} is smaller than the {n_known} known categories"
        )
    return k


def fit_arrays(X_labeled, y_labeled, X_unlabeled, label_space: LabelSpace, config: Config) -> TrainState:
    """Train on raw arrays; the core behind both ``train`` and the estimator.

    ``y_labeled`` holds known-category ids. The unlabeled rows carry no
    labels here by construction, which is what keeps ground truth out of
    the training path.
    """
    X_labeled = np.asarray(X_labeled, dtype=np.float64)
    X_unlabeled = np.asarray(X_unlabeled, dtype=np.float64)
    index_of = {cat: i for i, cat in enumerate(label_space.known_ids)}
    try:
        label_idx = np.array([index_of[y] for y in y_labeled], dtype=np.intp)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} is not a known category") from exc

    d_in = X_labeled.shape[1]
    d_out = config.out_dim if config.out_dim is not None else d_in
    if config.head_init == "identity" and d_out == d_in:
        head = identity_head(d_in, config.activation)
    else:
        head = random_head(d_in, d_out, stream(config.seed, "head-init"), config.activation)

    Z_u = head.forward(X_unlabeled)
    n_clusters = _resolve_n_clusters(config, Z_u, label_space.n_known)
    clustering = kmeans(
        Z_u,
        n_clusters,
        seed=stream(config.seed, "clustering"),
        max_iter=config.kmeans_max_iter,
        tol=config.kmeans_tol,
        n_init=config.kmeans_n_init,
    )
    unlab_protos = unlabeled_prototypes(Z_u, clustering)
    lab_protos = labeled_prototypes(head.forward(X_labeled), y_labeled, label_space)
    match = match_prototypes(lab_protos, unlab_protos)
    decoupling = decouple(match, clustering, label_space.known_ids)

    ce_w = ce_b = None
    if config.ce_head == "linear":
        ce_w = np.zeros((d_out, label_space.n_known))
        ce_b = np.zeros(label_space.n_known)

    trace = []
    head = head.copy()
    for epoch in range(config.epochs):
        breakdown, grads = total_loss(
            head,
            X_labeled,
            label_idx,
            X_unlabeled,
            decoupling,
            clustering.assignment,
            lab_protos,
            unlab_protos,
            match,
            config,
            ce_weights=ce_w,
            ce_bias=ce_b,
        )
        trace.append(breakdown)
        head.weights = head.weights - config.learning_rate * grads["weights"]
        head.bias = head.bias - config.learning_rate * grads["bias"]
        if ce_w is not None and "ce_weights" in grads:
            ce_w = ce_w - config.learning_rate * grads["ce_weights"]
            ce_b = ce_b - config.learning_rate * grads["ce_bias"]

        fresh = labeled_prototypes(head.forward(X_labeled), y_labeled, label_space)
        if config.ablated("no_ema"):
            lab_protos = fresh
        else:
            lab_protos = ema_update(lab_protos, fresh, config.alpha)

        done = epoch + 1
        if config.recluster_period and done % config.recluster_period == 0 and done < config.epochs:
            Z_u = head.forward(X_unlabeled)
            clustering = kmeans(
                Z_u,
                n_clusters,
                seed=stream(config.seed, f"recluster-{done}"),
                max_iter=config.kmeans_max_iter,
                tol=config.kmeans_tol,
                n_init=config.kmeans_n_init,
            )
            unlab_protos = unlabeled_prototypes(Z_u, clustering)
            match = match_prototypes(lab_protos, unlab_protos)
            decoupling = decouple(match, clustering, label_space.known_ids)
        elif config.rematch_period and done % config.rematch_period == 0 and done < config.epochs:
            match = match_prototypes(lab_protos, unlab_protos)
            decoupling = decouple(match, clustering, label_space.known_ids)

    return TrainState(
        head=head,
        labeled_prototypes=lab_protos,
        unlabeled_prototypes=unlab_protos,
        match=match,
        label_space=label_space,
        config=config,
        epoch=config.epochs,
        loss_trace=tuple(trace),
        decoupling=decoupling,
        clustering=clustering,
        ce_weights=ce_w,
        ce_bias=ce_b,
    )


def train(dataset: Dataset, config: Config) -> TrainState:
    """Train on a Dataset; ground truth on unlabeled rows is never read."""
    X_l, y_l, X_u = dataset.training_view()
    return fit_arrays(X_l, y_l, X_u, dataset.label_space, config)


# ---------------------------------------------------------------------------
# Flat-text serialization: loss traces and checkpoints


def write_loss_trace(path, trace) -> None:
    lines = ["\t".join(TRACE_COLUMNS)]
    for epoch, b in enumerate(trace):
        lines.append(
            "\t".join(
                [str(epoch)]
                + [
                    repr(v)
                    for v in (
                        b.soft_novel,
                        b.soft_known,
                        b.cross_entropy,
                        b.regularizer,
                        b.known_total,
                        b.total,
                    )
                ]
            )
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


CHECKPOINT_FORMAT = "dpn-checkpoint-v1"


def _matrix_lines(name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    lines = [f"[matrix {name} {arr.shape[0]} {arr.shape[1]}]"]
    for row in arr:
        lines.append("\t".join(repr(float(v)) for v in row))
    return lines


def save_checkpoint(state: TrainState, path) -> None:
    """Write a TrainState as flat text; everything evaluation needs."""
    lines = [
        f"format={CHECKPOINT_FORMAT}",
        f"version={_version}",
        f"epoch={state.epoch}",
        f"activation={state.head.activation}",
        "known_ids=" + ",".join(state.label_space.known_ids),
        "novel_ids=" + ",".join(state.label_space.novel_ids),
        "permutation=" + ",".join(str(i) for i in state.match.permutation),
        "unmatched=" + ",".join(str(i) for i in state.match.unmatched),
        f"total_cost={state.match.total_cost!r}",
    ]
    for key, value in state.config.to_mapping().items():
        lines.append(f"config.{key}={value}")
    lines += _matrix_lines("weights", state.head.weights)
    lines += _matrix_lines("bias", state.head.bias)
    lines += _matrix_lines("labeled_prototypes", state.labeled_prototypes.vectors)
    lines += _matrix_lines("unlabeled_prototypes", state.unlabeled_prototypes.vectors)
    lines += _matrix_lines("cost_matrix", state.match.cost_matrix)
    if state.ce_weights is not None:
        lines += _matrix_lines("ce_weights", state.ce_weights)
        lines += _matrix_lines("ce_bias", state.ce_bias)
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> TrainState:
    """Rebuild a TrainState from a checkpoint file.

    The clustering and decoupling of the original run are not stored;
    the loaded state supports evaluation and further inference only.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    fields = {}
    matrices = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("[matrix "):
            parts = line[1:-1].split()
            if len(parts) != 4:
                raise SchemaError(f"{path}: bad matrix header {line!r}")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            block = np.empty((rows, cols))
            for r in range(rows):
                block[r] = [float(v) for v in lines[i].split("\t")]
                i += 1
            matrices[name] = block
        elif "=" in line:
            key, _, value = line.partition("=")
            fields[key] = value
        else:
            raise SchemaError(f"{path}: unexpected line {line!r}")
    if fields.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path}: not a {CHECKPOINT_FORMAT} file")

    from .config import config_from_mapping

    cfg_map = {k[len("config.") :]: v for k, v in fields.items() if k.startswith("config.")}
    config = config_from_mapping(cfg_map)
    known_ids = tuple(v for v in fields["known_ids"].split(",") if v)
    novel_ids = tuple(v for v in fields["novel_ids"].split(",") if v)
    label_space = LabelSpace(known_ids, novel_ids)
    head = ProjectionHead(matrices["weights"], matrices["bias"][0], fields["activation"])
    lab = PrototypeSet(matrices["labeled_prototypes"], kind="labeled", category_ids=known_ids)
    unlab = PrototypeSet(matrices["unlabeled_prototypes"], kind="unlabeled")
    permutation = tuple(int(v) for v in fields["permutation"].split(",") if v != "")
    unmatched = tuple(int(v) for v in fields["unmatched"].split(",") if v != "")
    match = PrototypeMatch(
        permutation=permutation,
        total_cost=float(fields["total_cost"]),
        matched=permutation,
        unmatched=unmatched,
        cost_matrix=matrices["cost_matrix"],
    )
    ce_w = matrices.get("ce_weights")
    ce_b = matrices["ce_bias"][0] if "ce_bias" in matrices else None
    return TrainState(
        head=head,
        labeled_prototypes=lab,
        unlabeled_prototypes=unlab,
        match=match,
        label_space=label_space,
        config=config,
        epoch=int(fields.get("epoch", 0)),
        ce_weights=ce_w,
        ce_bias=ce_b,
    )
