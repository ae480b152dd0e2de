"""Prototype losses with analytic embedding gradients.

Every loss returns ``(value, grad)`` where ``grad`` has the shape of the
embedding batch and is the exact derivative of ``value``; prototypes are
treated as constants throughout. The gradient of a Euclidean distance at
a coincident point is taken to be zero (subgradient choice).

* ``soft_assignment_loss`` weights each instance-prototype Euclidean
  distance by a temperature-scaled softmax over cosine similarities
  (semantic weights), differentiating through both factors.
* ``hard_assignment_loss`` is the classic prototypical form: negative log
  softmax over negated distances at the assigned prototype.
* ``prototype_regularization_loss`` pulls instances toward labeled
  prototypes under cosine distance, weighted the same soft way.
* ``prototype_cross_entropy`` classifies labeled instances by softmax
  over temperature-scaled prototype cosines.
"""

from __future__ import annotations

import numpy as np

from ._validation import as_matrix, check_same_dim
from .exceptions import ConfigError, LabelError, ShapeError, ZeroNormError
from .kernels import distances_to, log_softmax_rows, softmax_rows


def _checked_pair(Z, prototypes, require_nonzero=True):
    Z = as_matrix(Z, "embeddings")
    U = as_matrix(prototypes, "prototypes")
    check_same_dim(Z, U, "embeddings and prototypes")
    zn = np.sqrt((Z * Z).sum(axis=1))
    un = np.sqrt((U * U).sum(axis=1))
    if require_nonzero and (np.any(zn == 0.0) or np.any(un == 0.0)):
        raise ZeroNormError("zero-norm embedding or prototype")
    return Z, U, zn, un


def _cosines(Z, U, zn, un):
    return (Z @ U.T) / np.outer(zn, un)


def _distance_pull(coeff, Z, U):
    """Gradient contribution sum_k coeff[i,k] * (z_i - u_k)."""
    return Z * coeff.sum(axis=1)[:, None] - coeff @ U


def _cosine_pull(coeff, Z, U, C, zn, un):
    """Gradient contribution sum_k coeff[i,k] * d cos(z_i, u_k) / d z_i."""
    lead = ((coeff / un[None, :]) @ U) / zn[:, None]
    back = ((coeff * C).sum(axis=1) / (zn * zn))[:, None] * Z
    return lead - back


def _safe_inverse(D):
    return np.divide(1.0, D, out=np.zeros_like(D), where=D > 0.0)


def soft_assignment_loss(
    Z,
    prototypes,
    tau: float,
    *,
    semantic_weights: bool = True,
    detach_weights: bool = False,
):
    """Mean semantically weighted instance-prototype distance.

    Per instance, the Euclidean distance to every prototype is weighted by
    softmax(cos(z, u_k) / tau) over prototypes and summed. With
    ``semantic_weights=False`` the weights are uniform 1/K. With
    ``detach_weights=True`` the weights are kept out of the gradient.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    Z, U, zn, un = _checked_pair(Z, prototypes)
    n, n_proto = Z.shape[0], U.shape[0]
    D = distances_to(Z, U)
    C = _cosines(Z, U, zn, un)
    if semantic_weights:
        W = softmax_rows(C / tau)
    else:
        W = np.full_like(D, 1.0 / n_proto)
    loss = float((D * W).sum(axis=1).mean())

    grad = _distance_pull(W * _safe_inverse(D), Z, U)
    if semantic_weights and not detach_weights:
        weighted_mean = (D * W).sum(axis=1, keepdims=True)
        coeff = W * (D - weighted_mean) / tau
        grad = grad + _cosine_pull(coeff, Z, U, C, zn, un)
    return loss, grad / n


def hard_assignment_loss(Z, assignment, prototypes):
    """Negative log-likelihood of the assigned prototype under a softmax
    over negated Euclidean distances."""
    Z, U, _, _ = _checked_pair(Z, prototypes)
    n, n_proto = Z.shape[0], U.shape[0]
    assignment = np.asarray(assignment, dtype=np.intp)
    if assignment.shape != (n,):
        raise ShapeError(f"need one assignment per instance, got shape {assignment.shape}")
    if assignment.size and (assignment.min() < 0 or assignment.max() >= n_proto):
        raise LabelError("assignment index out of range")
    D = distances_to(Z, U)
    logp = log_softmax_rows(-D)
    loss = float(-logp[np.arange(n), assignment].mean())

    onehot = np.zeros_like(D)
    onehot[np.arange(n), assignment] = 1.0
    coeff = (onehot - np.exp(logp)) * _safe_inverse(D)
    return loss, _distance_pull(coeff, Z, U) / n


def prototype_regularization_loss(Z, prototypes, tau: float):
    """Mean semantically weighted cosine distance to labeled prototypes.

    Uses (1 - cos) as the distance and the same softmax(cos/tau) weights,
    transferring category structure from the labeled prototypes onto the
    given embeddings.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    Z, U, zn, un = _checked_pair(Z, prototypes)
    n = Z.shape[0]
    C = _cosines(Z, U, zn, un)
    V = 1.0 - C
    W = softmax_rows(C / tau)
    loss = float((V * W).sum(axis=1).mean())

    weighted_mean = (V * W).sum(axis=1, keepdims=True)
    coeff = W * ((V - weighted_mean) / tau - 1.0)
    return loss, _cosine_pull(coeff, Z, U, C, zn, un) / n


def prototype_cross_entropy(Z, labels, prototypes, tau: float):
    """Cross entropy of true categories under softmax(cos(z, u)/tau) logits."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    Z, U, zn, un = _checked_pair(Z, prototypes)
    n, n_proto = Z.shape[0], U.shape[0]
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ShapeError(f"need one label per instance, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_proto):
        raise LabelError("label index outside the known categories")
    C = _cosines(Z, U, zn, un)
    logp = log_softmax_rows(C / tau)
    loss = float(-logp[np.arange(n), labels].mean())

    onehot = np.zeros_like(C)
    onehot[np.arange(n), labels] = 1.0
    coeff = (np.exp(logp) - onehot) / tau
    return loss, _cosine_pull(coeff, Z, U, C, zn, un) / n


def linear_cross_entropy(Z, labels, weights, bias):
    """Cross entropy under an affine classifier head; also returns the
    gradients for the head parameters.

    Returns (loss, grad_Z, grad_weights, grad_bias).
    """
    Z = as_matrix(Z, "embeddings")
    n = Z.shape[0]
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (n,):
        raise ShapeError(f"need one label per instance, got shape {labels.shape}")
    logits = Z @ weights + bias
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelError("label index outside the classifier range")
    logp = log_softmax_rows(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits @ weights.T, Z.T @ dlogits, dlogits.sum(axis=0)
