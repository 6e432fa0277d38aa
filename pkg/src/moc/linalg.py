"""Dense numeric kernels shared by every stage of the pipeline.

All kernels compute in float64 regardless of the dtype handed in, and every
selection routine breaks ties by ascending original index, so repeated runs
are bit-identical.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, NormTooSmall

NORM_EPS = 1e-12


def as_vector(v) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteValue("vector contains NaN/Inf")
    return arr


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionMismatch(f"expected a non-empty matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteValue("matrix contains NaN/Inf")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < NORM_EPS:
        raise NormTooSmall(f"norm {norm:.3e} below {NORM_EPS:.0e}; degenerate feature")
    return arr / norm


def l2_normalize_rows(a) -> np.ndarray:
    """Row-wise :func:`l2_normalize` over a matrix."""
    arr = as_matrix(a)
    norms = np.linalg.norm(arr, axis=1)
    if float(norms.min()) < NORM_EPS:
        bad = int(np.argmin(norms))
        raise NormTooSmall(f"row {bad} has norm {norms[bad]:.3e} below {NORM_EPS:.0e}")
    return arr / norms[:, None]


def matvec_t(a, w) -> np.ndarray:
    """out[i] = sum_k a[i, k] * w[k], accumulated in float64."""
    mat = as_matrix(a)
    vec = as_vector(w)
    if mat.shape[1] != vec.shape[0]:
        raise DimensionMismatch(f"matrix has {mat.shape[1]} columns, vector has {vec.shape[0]} entries")
    return mat @ vec


def softmax(v) -> np.ndarray:
    """Stable softmax with max-subtraction; output sums to 1."""
    arr = as_vector(v)
    z = np.exp(arr - arr.max())
    return z / z.sum()


def softmax_rows(a) -> np.ndarray:
    """Row-wise stable softmax."""
    arr = as_matrix(a)
    z = np.exp(arr - arr.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def top_k_indices(v, k: int) -> np.ndarray:
    """Indices of the ``min(k, len(v))`` largest entries, best first.

    Ties break by ascending original index; ``k`` past the end returns all
    indices in descending-value order.
    """
    arr = as_vector(v)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    # Stable argsort of the negated values keeps the lowest index first
    # within each tie group.
    order = np.argsort(-arr, kind="stable")
    return order[: min(k, arr.shape[0])]
