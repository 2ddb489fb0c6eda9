"""Causal multi-head attention in two interchangeable flavors.

``attention_explicit`` materializes the attention matrix and can splice an
additive guidance row into it: the reference path, also used for
profiling BOS attention.

``attention_fused`` streams over key blocks with an online softmax and
never exposes weights, mimicking fused kernels whose internals are
unavailable. Guidance for this path is applied *outside* the kernel as a
value-space correction (output + sum_i G_i * beta * gamma_h * rho * V_i),
which callers obtain from the guidance session; equivalence of the two
routes is a tested invariant.

Shapes: q is [Tq, H, dh]; k and v are [Tk, H, dh] with Tk >= Tq. Query row
i sits at absolute position (Tk - Tq + i) and attends keys 0..that
position (causal). Computation accumulates in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInput, ShapeError

_KEY_BLOCK = 64


@dataclass(frozen=True)
class GuidanceRow:
    """Additive guidance for the last query row's visual columns.

    ``weights`` is a unit-mass vector over the visual span ``span``; head h
    receives weights scaled by ``beta * gamma[h] * rho``.
    """

    weights: np.ndarray
    beta: float
    gamma: np.ndarray
    rho: float
    span: tuple[int, int]

    def head_scales(self) -> np.ndarray:
        return self.beta * self.rho * np.asarray(self.gamma, dtype=np.float64)


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("q, k, v must be [T, n_heads, d_head]")
    if k.shape != v.shape:
        raise ShapeError(f"k/v shape mismatch: {k.shape} vs {v.shape}")
    if q.shape[1:] != k.shape[1:]:
        raise ShapeError(f"q vs k head dims mismatch: {q.shape} vs {k.shape}")
    if q.shape[0] > k.shape[0]:
        raise ShapeError("more query rows than key rows (cache shorter than queries)")
    return (
        np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
    )


def attention_explicit(q, k, v, guidance: GuidanceRow | None = None):
    """Reference attention; returns (z, alpha) with alpha shaped [H, Tq, Tk].

    With ``guidance``, the last query row's weights over the visual span get
    the additive boost before the value reduction, so the returned alpha is
    the guided matrix (its guided row sums to 1 + beta*gamma_h*rho).
    """
    q, k, v = _check_qkv(q, k, v)
    tq, n_heads, d_head = q.shape
    tk = k.shape[0]
    offset = tk - tq

    scores = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(d_head)
    cols = np.arange(tk)[None, :]
    rows = (np.arange(tq) + offset)[:, None]
    scores = np.where(cols <= rows, scores, -np.inf)

    alpha = np.exp(scores - scores.max(axis=-1, keepdims=True))
    alpha /= alpha.sum(axis=-1, keepdims=True)

    if guidance is not None:
        s, e = guidance.span
        if not (0 <= s < e <= tk):
            raise ShapeError(f"guidance span [{s}, {e}) outside key range {tk}")
        g = np.asarray(guidance.weights, dtype=np.float64)
        if g.shape != (e - s,):
            raise ShapeError("guidance weights do not match the visual span")
        if e - 1 > offset + tq - 1:
            raise InvalidInput("guidance span is not visible to the last query row")
        alpha = alpha.copy()
        alpha[:, -1, s:e] += guidance.head_scales()[:, None] * g[None, :]

    z = np.einsum("hqk,khd->qhd", alpha, v)
    return z, alpha


def attention_fused(q, k, v) -> np.ndarray:
    """Streaming attention; returns z only, weights are never materialized."""
    q, k, v = _check_qkv(q, k, v)
    tq, n_heads, d_head = q.shape
    tk = k.shape[0]
    offset = tk - tq

    running_max = np.full((tq, n_heads), -np.inf)
    denom = np.zeros((tq, n_heads))
    acc = np.zeros((tq, n_heads, d_head))
    scale = 1.0 / np.sqrt(d_head)
    rows = np.arange(tq) + offset

    for start in range(0, tk, _KEY_BLOCK):
        stop = min(start + _KEY_BLOCK, tk)
        kb = k[start:stop]
        vb = v[start:stop]
        scores = np.einsum("qhd,khd->qhk", q, kb) * scale
        mask = np.arange(start, stop)[None, :] <= rows[:, None]
        scores = np.where(mask[:, None, :], scores, -np.inf)

        block_max = scores.max(axis=-1)
        new_max = np.maximum(running_max, block_max)
        # Rescale previous accumulators; exp(-inf - finite) underflows to 0 safely.
        with np.errstate(invalid="ignore"):
            carry = np.where(np.isneginf(running_max), 0.0, np.exp(running_max - new_max))
        weights = np.exp(scores - new_max[:, :, None])
        weights = np.where(mask[:, None, :], weights, 0.0)

        denom = denom * carry + weights.sum(axis=-1)
        acc = acc * carry[:, :, None] + np.einsum("qhk,khd->qhd", weights, vb)
        running_max = new_max

    return acc / denom[:, :, None]
