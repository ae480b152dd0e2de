"""Trainable affine projection head mapping input vectors to embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix
from .exceptions import ConfigError, DimensionError, NonFiniteError


@dataclass
class ProjectionHead:
    """Affine map ``activation(x @ weights + bias)``.

    ``weights`` has shape (d_in, d_out); the identity activation is the
    default, tanh is available for a bounded embedding space.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weights must be 2-d and bias 1-d")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise DimensionError(
                f"bias dim {self.bias.shape[0]} does not match weight columns {self.weights.shape[1]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteError("head parameters must be finite")
        if self.activation not in ("identity", "tanh"):
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    def forward(self, x) -> np.ndarray:
        """Embed a single vector or a batch of row vectors."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else as_matrix(x, "x")
        if X.shape[1] != self.d_in:
            raise DimensionError(f"input dim {X.shape[1]} does not match head d_in {self.d_in}")
        A = X @ self.weights + self.bias
        Z = np.tanh(A) if self.activation == "tanh" else A
        return Z[0] if single else Z

    def backward(self, X, Z, grad_Z):
        """Parameter gradients for a batch given upstream embedding grads.

        ``Z`` must be the forward output for ``X``. Returns
        (grad_weights, grad_bias).
        """
        delta = grad_Z * (1.0 - Z * Z) if self.activation == "tanh" else grad_Z
        return X.T @ delta, delta.sum(axis=0)

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weights.copy(), self.bias.copy(), self.activation)


def identity_head(dim: int, activation: str = "identity") -> ProjectionHead:
    """Head initialized to the identity map (requires d_out == d_in)."""
    return ProjectionHead(np.eye(dim), np.zeros(dim), activation)


def random_head(d_in: int, d_out: int, rng, activation: str = "identity") -> ProjectionHead:
    """Seeded uniform init scaled by 1/sqrt(d_in)."""
    bound = 1.0 / np.sqrt(d_in)
    return ProjectionHead(
        rng.uniform(-bound, bound, size=(d_in, d_out)), np.zeros(d_out), activation
    )
