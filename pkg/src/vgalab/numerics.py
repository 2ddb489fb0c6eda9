"""Pure numeric kernels: stabilized softmax, mass normalization, clamped cosine.

Every kernel validates for NaN/Inf and raises InvalidInput instead of
propagating poison. Kernels are dtype-preserving for float inputs and
compute in float64 otherwise; callers that need tight tolerances pass
float64 arrays.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInput, ShapeError

# Tolerances used by consumers when checking kernel invariants.
ROW_SUM_TOL = 1e-6
NORM_SUM_TOL = 1e-6
DEGENERATE_EPS = 1e-12
L0_EPS = 1e-12


def _as_float_array(x, name: str, min_dim: int = 1, max_dim: int = 2) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim < min_dim or arr.ndim > max_dim:
        raise ShapeError(f"{name} must have {min_dim}..{max_dim} dims, got {arr.ndim}")
    if arr.size == 0:
        raise ShapeError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return arr


def row_softmax(logits) -> np.ndarray:
    """Numerically stabilized softmax along the last axis.

    Accepts a vector or a matrix; each row is shifted by its max before
    exponentiation, so the result is invariant to per-row constant shifts.
    """
    arr = _as_float_array(logits, "logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def sum_normalize(values, eps: float = DEGENERATE_EPS) -> tuple[np.ndarray, bool]:
    """Scale a nonnegative vector to unit sum.

    Returns (normalized, degenerate). When the input mass is below ``eps``
    the result is the uniform distribution and ``degenerate`` is True;
    downstream guidance treats that as "no information". Negative entries
    raise InvalidInput.
    """
    arr = _as_float_array(values, "values", max_dim=1)
    if np.any(arr < 0):
        raise InvalidInput("sum_normalize requires nonnegative entries")
    total = float(arr.sum())
    if total < eps:
        return np.full(arr.shape, 1.0 / arr.size, dtype=arr.dtype), True
    return arr / total, False


def cosine_sim_clamped(a, b) -> float:
    """Cosine similarity clamped to [0, 1]; zero vectors compare as 0."""
    va = _as_float_array(a, "a", max_dim=1)
    vb = _as_float_array(b, "b", max_dim=1)
    if va.shape != vb.shape:
        raise ShapeError(f"length mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    sim = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(0.0, sim))


def l0_fraction(values, eps: float = L0_EPS) -> float:
    """Fraction of entries with magnitude strictly above ``eps``."""
    arr = _as_float_array(values, "values", max_dim=1)
    return float(np.count_nonzero(np.abs(arr) > eps)) / arr.size
