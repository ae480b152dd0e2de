"""Scikit-learn style estimator wrapping the full discovery pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_matrix
from .config import Config
from .data import LabelSpace
from .exceptions import DimensionError
from .kmeans import assign_to_nearest
from .training import fit_arrays

UNLABELED = -1


def _unlabeled_mask(y) -> np.ndarray:
    """True where a target value marks an unlabeled instance.

    Recognized markers: -1 (the scikit-learn semi-supervised convention),
    None, NaN, "", and "?".
    """
    out = np.zeros(len(y), dtype=bool)
    for i, value in enumerate(y):
        if value is None:
            out[i] = True
        elif isinstance(value, float) and np.isnan(value):
            out[i] = True
        elif isinstance(value, (int, np.integer)) and int(value) == UNLABELED:
            out[i] = True
        elif isinstance(value, str) and value in ("", "?", str(UNLABELED)):
            out[i] = True
    return out


class DecoupledPrototypicalNetwork(ClusterMixin, TransformerMixin, BaseEstimator):
    """Generalized category discovery over precomputed feature vectors.

    Fits a small trainable projection head on a partially labeled sample:
    labeled rows carry known-category targets, unlabeled rows are marked
    with ``-1`` (or None / NaN / "?"). The unlabeled data is clustered
    into ``n_clusters`` groups, cluster prototypes are matched against
    known-category prototypes by minimum total Euclidean cost, and the
    matched (known) and unmatched (novel) parts are trained with separate
    objectives: semantically weighted soft prototype assignment for both,
    plus cross entropy and a labeled-prototype regularizer for the known
    side. Labeled prototypes follow an exponential moving average across
    epochs.

    Parameters
    ----------
    n_clusters : int or "estimate", default="estimate"
        Total number of categories (known + novel). "estimate" infers it
        from the unlabeled data and requires ``k_max``.
    tau : float, default=0.07
        Softmax temperature for similarity weights and logits.
    gamma : float, default=10.0
        Weight of the labeled-prototype regularization term.
    alpha : float, default=0.9
        Momentum of the exponential-moving-average prototype update.
    learning_rate : float, default=0.003
        Full-batch gradient descent step size.
    epochs : int, default=30
        Training epochs; 0 keeps the head at its initialization.
    activation : {"identity", "tanh"}, default="identity"
        Projection head activation.
    out_dim : int or None, default=None
        Embedding width; None keeps the input width (identity init).
    ablations : sequence of str, default=()
        Any of "no_ce", "no_ema", "no_decouple", "no_soft_assignment",
        "no_semantic_weights" to disable a component.
    k_max : int or None, default=None
        Upper bound for category-count estimation.
    threshold_factor : float, default=0.5
        Sensitivity of the category-count estimator, in (0, 1).
    random_state : int, default=0
        Seed for every random stream of the run.

    Attributes
    ----------
    state_ : TrainState
        Full training state (head, prototypes, matching, decoupling).
    labels_ : ndarray of shape (n_samples,)
        Cluster index of every fit row (nearest unlabeled prototype).
    known_categories_ : tuple
        Sorted known-category identifiers seen in ``y``.
    cluster_categories_ : tuple
        Per cluster, the matched known category or None if novel.
    loss_trace_ : tuple of LossBreakdown
        Per-epoch loss terms.

    Examples
    --------
    >>> import numpy as np
    >>> from dpn import DecoupledPrototypicalNetwork, SynthSpec, generate_synthetic
    >>> ds = generate_synthetic(SynthSpec(n_categories=4, n_known=2, dim=8, seed=0))
    >>> X = np.vstack([ds.labeled.X, ds.unlabeled.X])
    >>> y = list(ds.labeled.y) + [-1] * len(ds.unlabeled)
    >>> est = DecoupledPrototypicalNetwork(n_clusters=4, epochs=5).fit(X, y)
    >>> est.score(ds.test.X, ds.test.y)
    1.0
    """

    def __init__(
        self,
        n_clusters="estimate",
        *,
        tau=0.07,
        gamma=10.0,
        alpha=0.9,
        learning_rate=0.003,
        epochs=30,
        activation="identity",
        out_dim=None,
        ablations=(),
        k_max=None,
        threshold_factor=0.5,
        kmeans_max_iter=300,
        kmeans_tol=1e-6,
        random_state=0,
    ):
        self.n_clusters = n_clusters
        self.tau = tau
        self.gamma = gamma
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.activation = activation
        self.out_dim = out_dim
        self.ablations = ablations
        self.k_max = k_max
        self.threshold_factor = threshold_factor
        self.kmeans_max_iter = kmeans_max_iter
        self.kmeans_tol = kmeans_tol
        self.random_state = random_state

    def _config(self) -> Config:
        return Config(
            tau=self.tau,
            gamma=self.gamma,
            alpha=self.alpha,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.random_state,
            n_clusters=self.n_clusters,
            ablations=frozenset(self.ablations),
            activation=self.activation,
            out_dim=self.out_dim,
            kmeans_max_iter=self.kmeans_max_iter,
            kmeans_tol=self.kmeans_tol,
            k_max=self.k_max,
            threshold_factor=self.threshold_factor,
        )

    def fit(self, X, y):
        """Fit on a partially labeled sample.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
            Precomputed feature vectors.
        y : array-like of shape (n_samples,)
            Known-category labels; -1 / None / NaN / "?" mark unlabeled
            rows. At least one labeled and one unlabeled row are required.
        """
        X = as_matrix(X, "X")
        y = list(y)
        if len(y) != X.shape[0]:
            raise DimensionError(f"{len(y)} targets for {X.shape[0]} rows")
        mask = _unlabeled_mask(y)
        if not mask.any():
            raise ValueError("no unlabeled rows: mark them with -1 (or None/NaN/'?')")
        if mask.all():
            raise ValueError("no labeled rows: known categories are required")
        labeled_idx = np.flatnonzero(~mask)
        unlabeled_idx = np.flatnonzero(mask)
        y_labeled = [str(y[i]) for i in labeled_idx]
        known = tuple(sorted(set(y_labeled)))
        label_space = LabelSpace(known_ids=known)

        state = fit_arrays(X[labeled_idx], y_labeled, X[unlabeled_idx], label_space, self._config())

        self.state_ = state
        self.known_categories_ = known
        self.n_features_in_ = X.shape[1]
        self.loss_trace_ = state.loss_trace
        mapping = [None] * state.n_clusters
        for pos, cluster in enumerate(state.match.matched):
            mapping[cluster] = known[pos]
        self.cluster_categories_ = tuple(mapping)
        self.labels_ = self._nearest(X)
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("this estimator is not fitted yet; call fit first")

    def _nearest(self, X) -> np.ndarray:
        Z = self.state_.head.forward(X)
        return assign_to_nearest(Z, self.state_.unlabeled_prototypes.vectors)

    def transform(self, X) -> np.ndarray:
        """Project feature vectors through the trained head."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return self.state_.head.forward(X)

    def predict(self, X) -> np.ndarray:
        """Assign each row to its nearest category prototype.

        Returns cluster indices over all discovered categories; map them
        to known-category names via ``cluster_categories_``. Note that
        the benchmark protocol instead re-clusters the embedded test set
        (see :func:`dpn.evaluation.evaluate`).
        """
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return self._nearest(X)

    def fit_predict(self, X, y=None, **kwargs):
        """Fit on the partially labeled sample, return its cluster labels.

        Unlike plain clusterers, ``y`` is required here (it carries the
        known-category labels; unlabeled rows are marked with -1).
        """
        return self.fit(X, y, **kwargs).labels_

    def predict_categories(self, X) -> list:
        """Like predict, but returns known-category names or None (novel)."""
        return [self.cluster_categories_[c] for c in self.predict(X)]

    def score(self, X, y) -> float:
        """Matched clustering accuracy of ``predict(X)`` against ``y``."""
        from .evaluation import clustering_accuracy

        self._check_fitted()
        acc, _ = clustering_accuracy(list(y), self.predict(X))
        return acc

    def _more_tags(self):
        return {"requires_y": True}
