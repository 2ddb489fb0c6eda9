"""Vision-guided attention: grounding-driven correction of decoder attention.

A ``VgaSession`` rides along a generation as the model's guidance hook.
At prefill it reads the visual-token logits and builds a grounding vector
(object-directed for question answering, salience-based for captions).
At each guided layer it corrects the current row's attention output in
value space:

    z_hat_h = z_h + beta * gamma_h * rho * sum_i G_i * V_h[s+i]

which is algebraically the same as adding ``beta * gamma_h * rho * G`` to
that row's attention weights over the visual span, but never requires the
weight matrix itself, so it composes with fused attention kernels. The
per-head factors gamma_h rebalance guidance toward heads whose output
already tracks the visual values; rho decays guidance as programmed
suppression drains the grounding during captioning.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInput, ShapeError
from .grounding import (
    DEFAULT_TOP_K,
    EXIST_LOG_THRESHOLD,
    Grounding,
    MaskAnnotation,
    extract_objects,
    merge_groundings,
    object_grounding,
    vss,
)
from .mllm import GuidanceRow, Model, PrefillResult, SequenceLayout, prefill
from .numerics import cosine_sim_clamped, sum_normalize
from .vocab import Vocabulary

MODES = ("vqa", "caption")
SOURCES = ("auto", "none", "even", "vsc", "vss", "reversed_vss", "ground_truth")
VSS_SIGNS = ("raw", "flipped")


@dataclass(frozen=True)
class VgaConfig:
    """Knobs for one guidance session.

    ``end_layer=None`` resolves to half the model's depth when the session
    binds to a model; ``early_termination=False`` extends guidance through
    the last layer instead. ``guidance_source="auto"`` picks the
    object-directed source in vqa mode and the salience source in caption
    mode.
    """

    beta: float = 0.2
    lambda_: float = 0.02
    start_layer: int = 0
    end_layer: int | None = None
    top_k: int = DEFAULT_TOP_K
    exist_threshold: float = EXIST_LOG_THRESHOLD
    mode: str = "vqa"
    guidance_source: str = "auto"
    head_balancing: bool = True
    early_termination: bool = True
    pvg_enabled: bool = True
    vss_sign: str = "raw"
    guide_all_rows: bool = False
    pvg_content_only: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ConfigError("beta must be finite and >= 0")
        if not np.isfinite(self.lambda_) or not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")
        if self.start_layer < 0:
            raise ConfigError("start_layer must be >= 0")
        if self.end_layer is not None and self.end_layer < self.start_layer:
            raise ConfigError("end_layer must be >= start_layer")
        if self.top_k < 2:
            raise ConfigError("top_k must be >= 2")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.guidance_source not in SOURCES:
            raise ConfigError(
                f"guidance_source must be one of {SOURCES}, got {self.guidance_source!r}"
            )
        if self.vss_sign not in VSS_SIGNS:
            raise ConfigError(f"vss_sign must be one of {VSS_SIGNS}")

    def resolved_source(self) -> str:
        if self.guidance_source != "auto":
            return self.guidance_source
        return "vsc" if self.mode == "vqa" else "vss"


@dataclass(frozen=True)
class HeadBalance:
    """Per-head guidance rebalancing derived from output/value similarity."""

    gamma_prime: np.ndarray
    gamma: np.ndarray


def delta_z(grounding: Grounding | np.ndarray, v_visual: np.ndarray) -> np.ndarray:
    """Grounding-weighted sum of visual value rows, per head.

    ``v_visual`` is the visual slice of the value cache, shaped
    [m, heads, d_head]; the result is [heads, d_head]. No attention
    weights are involved, which is what makes the correction compatible
    with kernels that never materialize them.
    """
    g = np.asarray(grounding.weights if isinstance(grounding, Grounding) else grounding)
    g = g.astype(np.float64)
    v = np.asarray(v_visual, dtype=np.float64)
    if g.ndim != 1 or v.ndim != 3:
        raise ShapeError("expected grounding [m] and values [m, heads, d_head]")
    if g.shape[0] != v.shape[0]:
        raise ShapeError(f"grounding length {g.shape[0]} != visual rows {v.shape[0]}")
    return np.einsum("i,ihd->hd", g, v)


def head_balance(z_row: np.ndarray, dz_row: np.ndarray) -> HeadBalance:
    """gamma' = Norm(clamped cos(z_h, dz_h)); gamma = ReLU(2 - H * gamma').

    Heads whose output already points along the visual correction get
    gamma below 1 (they need less help), the rest get more; the mean stays
    1 whenever the ReLU clips nothing. Degenerate similarities (all zero)
    fall back to uniform, i.e. gamma = 1 everywhere.
    """
    z = np.asarray(z_row, dtype=np.float64)
    dz = np.asarray(dz_row, dtype=np.float64)
    if z.shape != dz.shape or z.ndim != 2:
        raise ShapeError("z_row and dz_row must both be [heads, d_head]")
    n_heads = z.shape[0]
    sims = np.asarray(
        [cosine_sim_clamped(z[h], dz[h]) for h in range(n_heads)], dtype=np.float64
    )
    gamma_prime, _ = sum_normalize(sims)
    gamma = np.maximum(0.0, 2.0 - n_heads * gamma_prime)
    return HeadBalance(gamma_prime=gamma_prime, gamma=gamma)


class VgaSession:
    """Guidance state for one generation; plugs into the decoder as a hook.

    Construct unbound (via ``new_session``) and hand it to prefill or the
    greedy loop; it grounds itself when the visual logits arrive. The
    session is single-owner: programmed suppression mutates the grounding
    across decode steps in caption mode.
    """

    def __init__(
        self,
        model: Model,
        config: VgaConfig,
        question: str = "",
        gt_mask: MaskAnnotation | None = None,
    ) -> None:
        n_layers = model.config.n_layers
        start = config.start_layer
        if config.early_termination:
            end = config.end_layer if config.end_layer is not None else n_layers // 2
        else:
            end = n_layers
        if not 0 <= start <= end <= n_layers:
            raise ConfigError(
                f"guidance range [{start}, {end}) invalid for {n_layers} layers"
            )
        self.model = model
        self.config = config
        self.question = question
        self.gt_mask = gt_mask
        self.guide_all_rows = config.guide_all_rows
        self.start_layer = start
        self.end_layer = end
        self.source = config.resolved_source()
        self.grounding: Grounding | None = None
        self.layout: SequenceLayout | None = None
        self.visual_probs: np.ndarray | None = None
        self.fallback_uniform = False
        if self.source == "ground_truth" and gt_mask is None:
            raise ConfigError("ground_truth guidance requires a mask annotation")

    # -- hook protocol ------------------------------------------------------

    def on_visual(self, visual_logits: np.ndarray, layout: SequenceLayout, vocab: Vocabulary) -> None:
        logits = np.asarray(visual_logits, dtype=np.float64)
        if logits.shape[0] != layout.n_visual:
            raise ShapeError("visual logits row count disagrees with layout")
        # softmax rows cached once; programmed suppression looks up columns
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        self.visual_probs = expd / expd.sum(axis=1, keepdims=True)
        self.layout = layout
        self.grounding = self._build_grounding(logits, layout, vocab)

    def correction(self, layer: int, z_row: np.ndarray, v_cache: np.ndarray) -> GuidanceRow | None:
        self._require_bound()
        cfg = self.config
        if self.grounding is None or cfg.beta == 0.0:
            return None
        if not self.start_layer <= layer < self.end_layer:
            return None
        rho = self._effective_rho()
        if rho == 0.0:
            return None
        s, e = self.layout.visual_start, self.layout.visual_end
        if cfg.head_balancing:
            dz = delta_z(self.grounding, v_cache[s:e])
            gamma = head_balance(z_row, dz).gamma
        else:
            gamma = np.ones(z_row.shape[0], dtype=np.float64)
        return GuidanceRow(
            weights=self.grounding.weights,
            beta=cfg.beta,
            gamma=gamma,
            rho=rho,
            span=(s, e),
        )

    def on_token(self, token_id: int) -> None:
        cfg = self.config
        if cfg.mode != "caption" or not cfg.pvg_enabled or cfg.lambda_ == 0.0:
            return
        if self.grounding is None:
            return
        self._require_bound()
        if cfg.pvg_content_only:
            v = self.visual_probs.shape[1]
            if float(self.visual_probs[:, token_id].max()) <= 2.0 / v:
                return
        pvg_update(self, int(token_id))

    # -- internals ----------------------------------------------------------

    def _require_bound(self) -> None:
        if self.layout is None or self.visual_probs is None:
            raise ConfigError("session is not bound to a visual context yet")

    def _effective_rho(self) -> float:
        g = self.grounding
        if g is None or g.degenerate:
            return 0.0
        return 1.0 if self.config.mode == "vqa" else g.rho

    def _uniform(self, m: int) -> Grounding:
        return Grounding.from_values(np.ones(m))

    def _build_grounding(
        self, logits: np.ndarray, layout: SequenceLayout, vocab: Vocabulary
    ) -> Grounding | None:
        m = layout.n_visual
        source = self.source
        if source == "none":
            return None
        if source == "even":
            return self._uniform(m)
        if source == "vsc":
            words = extract_objects(self.question, vocab)
            if not words:
                warnings.warn(
                    "no vocabulary objects in question; falling back to even guidance",
                    stacklevel=2,
                )
                self.fallback_uniform = True
                return self._uniform(m)
            return merge_groundings(
                [object_grounding(logits, vocab.id_of(w)) for w in words]
            )
        if source == "vss":
            return vss(logits, k=self.config.top_k, sign=self.config.vss_sign)
        if source == "reversed_vss":
            flipped = "flipped" if self.config.vss_sign == "raw" else "raw"
            return vss(logits, k=self.config.top_k, sign=flipped)
        if source == "ground_truth":
            return Grounding.from_values(self.gt_mask.overlaps)
        raise ConfigError(f"unresolvable guidance source {source!r}")


def new_session(
    model: Model,
    config: VgaConfig,
    question: str = "",
    gt_mask: MaskAnnotation | None = None,
) -> VgaSession:
    """Unbound session, ready to be passed as the generation hook."""
    return VgaSession(model, config, question=question, gt_mask=gt_mask)


def init_session(
    model: Model,
    layout: SequenceLayout,
    prefill_result: PrefillResult,
    question: str,
    config: VgaConfig,
    gt_mask: MaskAnnotation | None = None,
) -> VgaSession:
    """Session bound to an already-computed prefill's visual logits."""
    session = new_session(model, config, question=question, gt_mask=gt_mask)
    session.on_visual(prefill_result.visual_logits, layout, model.vocab)
    return session


def guided_output(
    z_row: np.ndarray, v_visual: np.ndarray, session: VgaSession, layer: int
) -> np.ndarray:
    """Value-space guided attention output for one query row at one layer.

    Outside the session's layer range (or at beta 0, or with a fully
    drained grounding) the row passes through untouched.
    """
    cfg = session.config
    z = np.asarray(z_row, dtype=np.float64)
    if session.grounding is None or cfg.beta == 0.0:
        return z
    if not session.start_layer <= layer < session.end_layer:
        return z
    rho = session._effective_rho()
    if rho == 0.0:
        return z
    dz = delta_z(session.grounding, v_visual)
    if cfg.head_balancing:
        gamma = head_balance(z, dz).gamma
    else:
        gamma = np.ones(z.shape[0], dtype=np.float64)
    return z + cfg.beta * rho * gamma[:, None] * dz


def pvg_update(session: VgaSession, generated: int) -> None:
    """Suppress the just-described region of the grounding (caption mode).

    G_w is the normalized per-patch probability column of the generated
    token; the update G <- Norm(ReLU((1+lambda) G - lambda G_w)) lifts
    everything slightly and subtracts where the token was seen, so the
    next word's guidance looks away from what is already described.
    """
    lam = session.config.lambda_
    if lam == 0.0:
        return
    session._require_bound()
    if session.grounding is None:
        return
    g = session.grounding.weights
    column = session.visual_probs[:, generated]
    g_w, _ = sum_normalize(column)
    raw = (1.0 + lam) * g - lam * g_w
    session.grounding = Grounding.from_values(np.maximum(0.0, raw))


def bos_profile(model: Model, layout: SequenceLayout) -> list[float]:
    """Per-layer attention of the last prompt row to position 0 (BOS).

    Uses the reference attention kernel and max-pools over heads; the
    rising profile across layers locates where the model starts parking
    attention on its sink token.
    """
    result = prefill(model, layout, record_attention=True)
    return list(result.bos_attention)


def suggest_start_layer(profile: list[float], theta: float = 0.2) -> tuple[int, bool]:
    """First layer whose BOS attention reaches theta.

    Returns (layer, fallback); fallback is True when no layer crosses the
    threshold, in which case layer 0 is suggested and a warning is issued.
    """
    if len(profile) == 0:
        raise InvalidInput("profile must be nonempty")
    for idx, value in enumerate(profile):
        if value >= theta:
            return idx, False
    warnings.warn("no layer reaches the BOS-attention threshold; suggesting 0", stacklevel=2)
    return 0, True
