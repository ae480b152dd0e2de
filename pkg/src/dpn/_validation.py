"""Small input validation helpers shared by the numeric modules."""

import numpy as np

from .exceptions import DimensionError, EmptyInputError, NonFiniteError, ShapeError


def as_vector(x, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d vector, got shape {v.shape}")
    if v.size == 0:
        raise EmptyInputError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return v


def as_matrix(x, name: str = "X") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be a 2-d array, got shape {m.shape}")
    if m.shape[0] == 0:
        raise EmptyInputError(f"{name} has no rows")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def check_same_dim(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"{what} have mismatched dimensions {a.shape[-1]} and {b.shape[-1]}"
        )


def readonly(a: np.ndarray) -> np.ndarray:
    """Return a read-only view; callers keep results immutable by contract."""
    view = a.view()
    view.flags.writeable = False
    return view
