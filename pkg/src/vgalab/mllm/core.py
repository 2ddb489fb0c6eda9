"""The toy visual-prefix decoder: weights, KV cache, prefill/decode, greedy loop.

Architecture: learned absolute positional embeddings, pre-norm residual
blocks (RMS gains), causal multi-head attention, a 2-layer GELU MLP, and a
final unembedding with no output norm. Weights are stored float32; the
hidden stream is upcast to float64 once at the embedding so every
downstream op accumulates in f64.

Prefill runs in two phases over a single pass of the prompt: the visual
prefix first (yielding per-patch vocabulary logits), then the remaining
text rows attending the cached prefix. A guidance hook, when attached,
receives the visual logits between the phases and may correct the
attention output of designated rows at each layer. The hook is duck-typed:

    on_visual(visual_logits, layout, vocab)  -> None
    correction(layer, z_row, v_cache)        -> GuidanceRow | None
    on_token(token_id)                       -> None
    guide_all_rows                           -> bool (attribute, optional)

Corrections are applied in value space (z + beta*gamma_h*rho * sum_i G_i V_i),
the fused-compatible route; the explicit route splices the same weights into
the attention matrix instead, and the two must agree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import CapacityError, InvalidInput, ShapeError
from ..vocab import Vocabulary
from .attention import GuidanceRow, attention_explicit, attention_fused
from .config import ModelConfig, SequenceLayout

_NORM_EPS = 1e-6

# Rows pushed through the network since the last reset; guided and vanilla
# generation must tally identical counts for the same prompts.
_FORWARD_ROWS = 0


def forward_rows_count() -> int:
    return _FORWARD_ROWS


def reset_forward_rows() -> None:
    global _FORWARD_ROWS
    _FORWARD_ROWS = 0


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    norm1: np.ndarray
    norm2: np.ndarray
    mlp_w1: np.ndarray
    mlp_w2: np.ndarray


@dataclass(frozen=True)
class Model:
    """Immutable weight bundle; arrays are float32 and write-protected."""

    config: ModelConfig
    vocab: Vocabulary
    embed_tok: np.ndarray
    embed_pos: np.ndarray
    layers: tuple[LayerWeights, ...]
    unembed: np.ndarray

    def __post_init__(self) -> None:
        cfg = self.config
        if self.vocab.size != cfg.vocab_size:
            raise ShapeError("vocabulary size disagrees with config")
        checks = {
            "embed.tok": (self.embed_tok, (cfg.vocab_size, cfg.d_model)),
            "embed.pos": (self.embed_pos, (cfg.max_seq_len, cfg.d_model)),
            "unembed": (self.unembed, (cfg.d_model, cfg.vocab_size)),
        }
        if len(self.layers) != cfg.n_layers:
            raise ShapeError(f"expected {cfg.n_layers} layers, got {len(self.layers)}")
        for i, lw in enumerate(self.layers):
            checks[f"layers.{i}.wq"] = (lw.wq, (cfg.d_model, cfg.d_model))
            checks[f"layers.{i}.wk"] = (lw.wk, (cfg.d_model, cfg.d_model))
            checks[f"layers.{i}.wv"] = (lw.wv, (cfg.d_model, cfg.d_model))
            checks[f"layers.{i}.wo"] = (lw.wo, (cfg.d_model, cfg.d_model))
            checks[f"layers.{i}.norm1"] = (lw.norm1, (cfg.d_model,))
            checks[f"layers.{i}.norm2"] = (lw.norm2, (cfg.d_model,))
            checks[f"layers.{i}.mlp.w1"] = (lw.mlp_w1, (cfg.d_model, cfg.d_ff))
            checks[f"layers.{i}.mlp.w2"] = (lw.mlp_w2, (cfg.d_ff, cfg.d_model))
        for name, (arr, shape) in checks.items():
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            if arr.dtype != np.float32:
                raise ShapeError(f"{name}: expected float32, got {arr.dtype}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} contains NaN or Inf")
            arr.flags.writeable = False

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {"embed.tok": self.embed_tok, "embed.pos": self.embed_pos}
        for i, lw in enumerate(self.layers):
            out[f"layers.{i}.wq"] = lw.wq
            out[f"layers.{i}.wk"] = lw.wk
            out[f"layers.{i}.wv"] = lw.wv
            out[f"layers.{i}.wo"] = lw.wo
            out[f"layers.{i}.norm1"] = lw.norm1
            out[f"layers.{i}.norm2"] = lw.norm2
            out[f"layers.{i}.mlp.w1"] = lw.mlp_w1
            out[f"layers.{i}.mlp.w2"] = lw.mlp_w2
        out["unembed"] = self.unembed
        return out


class KvCache:
    """Preallocated per-layer key/value store, float64, append-only."""

    def __init__(self, config: ModelConfig) -> None:
        shape = (config.max_seq_len, config.n_heads, config.d_head)
        self.k = [np.zeros(shape) for _ in range(config.n_layers)]
        self.v = [np.zeros(shape) for _ in range(config.n_layers)]
        self._len = 0
        self.capacity = config.max_seq_len

    @property
    def length(self) -> int:
        return self._len

    def write(self, layer: int, start: int, k_rows: np.ndarray, v_rows: np.ndarray) -> None:
        stop = start + k_rows.shape[0]
        if stop > self.capacity:
            raise CapacityError(f"cache capacity {self.capacity} exceeded at position {stop}")
        self.k[layer][start:stop] = k_rows
        self.v[layer][start:stop] = v_rows

    def advance(self, n_rows: int) -> None:
        self._len += n_rows

    def view(self, layer: int, upto: int) -> tuple[np.ndarray, np.ndarray]:
        return self.k[layer][:upto], self.v[layer][:upto]


@dataclass
class PrefillResult:
    """Everything a guidance session needs after one pass over the prompt."""

    cache: KvCache
    visual_logits: np.ndarray
    last_logits: np.ndarray
    layout: SequenceLayout
    bos_attention: tuple[float, ...] | None = None


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + _NORM_EPS)
    return x / scale * gain


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh-form GELU; exactness vs erf is irrelevant at toy scale.
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * np.power(x, 3))))


def _guided_rows(n_rows: int, hook, is_last_block: bool) -> list[int]:
    if hook is None:
        return []
    if getattr(hook, "guide_all_rows", False):
        return list(range(n_rows))
    return [n_rows - 1] if is_last_block else []


def _forward_block(
    model: Model,
    cache: KvCache,
    token_ids: np.ndarray,
    start_pos: int,
    hook=None,
    *,
    explicit: bool = False,
    guide_block_tail: bool = False,
) -> tuple[np.ndarray, list[float]]:
    """Push ``token_ids`` (absolute positions start_pos..) through all layers.

    Returns (logits for the block rows, per-layer BOS attention of the last
    row when ``explicit``). Guidance corrections are applied to the block's
    last row (or every row when the hook asks for that) only when
    ``guide_block_tail`` is set.
    """
    global _FORWARD_ROWS
    cfg = model.config
    n = token_ids.shape[0]
    if start_pos + n > cfg.max_seq_len:
        raise CapacityError(
            f"sequence of length {start_pos + n} exceeds max_seq_len {cfg.max_seq_len}"
        )
    if np.any(token_ids < 0) or np.any(token_ids >= cfg.vocab_size):
        raise InvalidInput("token id out of vocabulary range")

    x = (
        model.embed_tok[token_ids].astype(np.float64)
        + model.embed_pos[start_pos : start_pos + n].astype(np.float64)
    )
    rows = _guided_rows(n, hook, guide_block_tail)
    bos_records: list[float] = []

    for layer_idx, lw in enumerate(model.layers):
        hn = rms_norm(x, lw.norm1)
        q = (hn @ lw.wq).reshape(n, cfg.n_heads, cfg.d_head)
        k = (hn @ lw.wk).reshape(n, cfg.n_heads, cfg.d_head)
        v = (hn @ lw.wv).reshape(n, cfg.n_heads, cfg.d_head)
        cache.write(layer_idx, start_pos, k, v)
        k_all, v_all = cache.view(layer_idx, start_pos + n)

        alpha = None
        if explicit:
            z, alpha = attention_explicit(q, k_all, v_all)
            bos_records.append(float(alpha[:, -1, 0].max()))
        else:
            z = attention_fused(q, k_all, v_all)

        for r in rows:
            corr = hook.correction(layer_idx, z[r], v_all)
            if corr is None:
                continue
            s, e = corr.span
            g = np.asarray(corr.weights, dtype=np.float64)
            scales = corr.head_scales()
            if explicit:
                # Reference route: splice into the weights, redo the reduction.
                alpha[:, r, s:e] += scales[:, None] * g[None, :]
                z[r] = np.einsum("hk,khd->hd", alpha[:, r, :], v_all)
            else:
                # Fused-compatible route: value-space correction, no weights.
                z[r] = z[r] + scales[:, None] * np.einsum("k,khd->hd", g, v_all[s:e])

        x = x + z.reshape(n, cfg.d_model) @ lw.wo
        x = x + gelu(rms_norm(x, lw.norm2) @ lw.mlp_w1) @ lw.mlp_w2

    _FORWARD_ROWS += n
    return x @ model.unembed, bos_records


def prefill(
    model: Model,
    layout: SequenceLayout,
    hook=None,
    *,
    record_attention: bool = False,
) -> PrefillResult:
    """One pass over the prompt; visual rows first, then the text tail.

    The split lets an attached hook ground itself on the visual logits
    before the text rows (the only guided ones) are processed, without a
    second pass. ``record_attention`` switches to the explicit kernel and
    records each layer's last-row attention to position 0.
    """
    cfg = model.config
    if layout.length > cfg.max_seq_len:
        raise CapacityError(
            f"prompt of length {layout.length} exceeds max_seq_len {cfg.max_seq_len}"
        )
    ids = layout.ids_array()
    e = layout.visual_end
    cache = KvCache(cfg)

    logits_prefix, bos_prefix = _forward_block(
        model, cache, ids[:e], 0, hook=None, explicit=record_attention
    )
    cache.advance(e)
    visual_logits = logits_prefix[layout.visual_start : e].copy()
    if hook is not None:
        hook.on_visual(visual_logits, layout, model.vocab)

    if e < layout.length:
        logits_tail, bos_tail = _forward_block(
            model,
            cache,
            ids[e:],
            e,
            hook=hook,
            explicit=record_attention,
            guide_block_tail=True,
        )
        cache.advance(layout.length - e)
        last_logits = logits_tail[-1].copy()
        bos = bos_tail
    else:
        last_logits = logits_prefix[-1].copy()
        bos = bos_prefix

    return PrefillResult(
        cache=cache,
        visual_logits=visual_logits,
        last_logits=last_logits,
        layout=layout,
        bos_attention=tuple(bos) if record_attention else None,
    )


def decode_step(model: Model, cache: KvCache, token_id: int, hook=None) -> np.ndarray:
    """Append one token and return the next-token logits."""
    if cache.length >= cache.capacity:
        raise CapacityError(f"cache full at capacity {cache.capacity}")
    ids = np.asarray([int(token_id)], dtype=np.int64)
    logits, _ = _forward_block(
        model, cache, ids, cache.length, hook=hook, guide_block_tail=True
    )
    cache.advance(1)
    return logits[0]


def full_logits(model: Model, layout: SequenceLayout) -> np.ndarray:
    """Logits for every prompt position in one uncached pass (oracle path)."""
    cache = KvCache(model.config)
    logits, _ = _forward_block(model, cache, layout.ids_array(), 0)
    return logits


def greedy_generate(
    model: Model,
    layout: SequenceLayout,
    vga=None,
    max_len: int = 512,
) -> list[int]:
    """Greedy decoding until EOS, ``max_len`` tokens, or cache capacity.

    Ties resolve to the lowest token id. When a guidance session is given
    it is attached as the prefill/decode hook and notified of every
    generated token (which is what drives per-token guidance updates).
    """
    if max_len < 1:
        raise InvalidInput("max_len must be >= 1")
    result = prefill(model, layout, hook=vga)
    logits = result.last_logits
    eos = model.vocab.eos_id
    out: list[int] = []
    for _ in range(max_len):
        token = int(np.argmax(logits))
        out.append(token)
        if vga is not None:
            vga.on_token(token)
        if token == eos or result.cache.length >= result.cache.capacity:
            break
        logits = decode_step(model, result.cache, token, hook=vga)
    return out


def generated_words(model: Model, token_ids: Sequence[int]) -> list[str]:
    """Map generated ids to words, dropping nothing; helper for reporting."""
    return [model.vocab.word_of(t) for t in token_ids]
