"""Dense float64 linear algebra helpers and scalar nonlinearities.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64
(1-D and 2-D, row-major).  The helpers here validate shapes and finiteness
and provide the numerically stable softmax / sigmoid used by every model.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

DTYPE = np.float64


def as_vec(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=DTYPE)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise InvalidInputError(f"{name} has dim {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def as_mat(w, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    m = np.asarray(w, dtype=DTYPE)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise InvalidInputError(f"{name} has {m.shape[0]} rows, expected {rows}")
    if cols is not None and m.shape[1] != cols:
        raise InvalidInputError(f"{name} has {m.shape[1]} cols, expected {cols}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return m


def affine(W, x, b) -> np.ndarray:
    """Return ``W @ x + b``."""
    W = as_mat(W, name="W")
    x = as_vec(x, W.shape[1], name="x")
    b = as_vec(b, W.shape[0], name="b")
    return W @ x + b


def softmax(z) -> np.ndarray:
    """Softmax over the last axis, with max-subtraction.

    Accepts a single logit vector or a ``(T, N)`` stack of them.
    """
    z = np.asarray(z, dtype=DTYPE)
    if z.size == 0 or z.ndim == 0:
        raise InvalidInputError("softmax of an empty input")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh(x):
    return np.tanh(x)


_ACTIVATIONS = {"sigmoid", "tanh"}


def activation(kind: str, x):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise InvalidInputError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")


def activation_grad(kind: str, x):
    """Derivative of ``activation(kind, .)`` evaluated at ``x``."""
    y = activation(kind, x)
    if kind == "sigmoid":
        return y * (1.0 - y)
    return 1.0 - y * y
