"""Grounding maps computed from a model's own visual-token logits.

Each visual position's vocabulary logits are read as semantics: the
softmax probability a patch assigns to an object word measures how
confident the model is that the patch shows that object. Normalizing
those per-patch confidences over the image yields a grounding vector;
summed log-improbability of the top-k tokens yields an object-agnostic
salience map. Both are plain length-m distributions suitable for
steering attention.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ShapeError
from .numerics import l0_fraction, row_softmax, sum_normalize
from .vocab import Vocabulary

EXIST_LOG_THRESHOLD = -2.5
DEFAULT_TOP_K = 10


@dataclass(frozen=True)
class Grounding:
    """A normalized distribution over visual positions.

    ``rho`` is the fraction of positions carrying non-negligible mass; a
    degenerate source (all mass suppressed) yields uniform weights with
    ``rho = 0`` so that downstream guidance scales itself to a no-op.
    """

    weights: np.ndarray
    rho: float
    degenerate: bool

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        w.flags.writeable = False

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @staticmethod
    def from_values(values: np.ndarray) -> "Grounding":
        """Sum-normalize nonnegative per-patch values into a Grounding."""
        weights, degenerate = sum_normalize(np.asarray(values, dtype=np.float64))
        rho = 0.0 if degenerate else l0_fraction(weights)
        return Grounding(weights=weights, rho=rho, degenerate=degenerate)


@dataclass(frozen=True)
class MaskAnnotation:
    """Ground-truth per-patch coverage fractions for one object word."""

    word: str
    overlaps: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.overlaps, dtype=np.float64)
        if g.ndim != 1:
            raise ShapeError(f"overlaps must be 1-d, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise InvalidInput("overlaps must be finite")
        if np.any(g < 0) or np.any(g > 1):
            raise InvalidInput("overlap coefficients must lie in [0, 1]")
        object.__setattr__(self, "overlaps", g)
        g.flags.writeable = False

    @property
    def patch_count(self) -> int:
        return int(np.count_nonzero(self.overlaps))


def _check_visual_logits(visual_logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(visual_logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"visual logits must be [m, V], got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidInput("visual logits must be finite")
    return logits


def vsc_vector(visual_logits: np.ndarray, word: int) -> np.ndarray:
    """Per-patch softmax confidence assigned to one token id (length m)."""
    logits = _check_visual_logits(visual_logits)
    m, v = logits.shape
    if not 0 <= word < v:
        raise IndexError(f"token id {word} out of range for vocab size {v}")
    return row_softmax(logits)[:, word]


def vsc_token(visual_logits: np.ndarray, patch: int, word: int) -> float:
    """Confidence of a single patch for a single token id."""
    logits = _check_visual_logits(visual_logits)
    m = logits.shape[0]
    if not 0 <= patch < m:
        raise IndexError(f"patch {patch} out of range for {m} patches")
    return float(vsc_vector(logits, word)[patch])


def image_confidence(visual_logits: np.ndarray, word: int) -> float:
    """Image-level confidence: the best patch's confidence for the word."""
    return float(np.max(vsc_vector(visual_logits, word)))


def exists(conf: float, threshold: float = EXIST_LOG_THRESHOLD) -> bool:
    """Existence decision: ln(conf) strictly above the log-threshold."""
    if not np.isfinite(conf):
        raise InvalidInput("confidence must be finite")
    if conf <= 0.0:
        raise InvalidInput("confidence must be positive")
    return bool(np.log(conf) > threshold)


def object_grounding(visual_logits: np.ndarray, word: int) -> Grounding:
    """Normalized per-patch confidence map for one object word."""
    return Grounding.from_values(vsc_vector(visual_logits, word))


def merge_groundings(groundings: list[Grounding]) -> Grounding:
    """Elementwise max across groundings, renormalized to sum 1."""
    if not groundings:
        raise InvalidInput("merge_groundings requires at least one grounding")
    size = groundings[0].size
    for gr in groundings[1:]:
        if gr.size != size:
            raise ShapeError(f"grounding lengths differ: {gr.size} vs {size}")
    stacked = np.stack([gr.weights for gr in groundings])
    return Grounding.from_values(np.max(stacked, axis=0))


def vss_values(
    visual_logits: np.ndarray, k: int = DEFAULT_TOP_K, sign: str = "raw"
) -> np.ndarray:
    """Raw per-patch salience: top-k log-improbability, unnormalized.

    For each patch the k most probable tokens contribute
    -sum(log p) / log(k); ``sign="flipped"`` replaces values x by
    max(x) - x for models where low raw values mark the salient patches.
    Values are nonnegative either way.
    """
    logits = _check_visual_logits(visual_logits)
    m, v = logits.shape
    if not 2 <= k <= v:
        raise InvalidInput(f"top-k must satisfy 2 <= k <= {v}, got {k}")
    if sign not in ("raw", "flipped"):
        raise InvalidInput(f"unknown vss sign {sign!r}")
    # log-softmax keeps tiny probabilities finite where softmax underflows
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    logprobs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    # top-k per row; order within the k does not matter for the sum
    topk = np.partition(logprobs, v - k, axis=1)[:, v - k:]
    values = -np.sum(topk, axis=1) / np.log(k)
    if sign == "flipped":
        values = np.max(values) - values
    return values


def vss(visual_logits: np.ndarray, k: int = DEFAULT_TOP_K, sign: str = "raw") -> Grounding:
    """Object-agnostic salience grounding: ``vss_values`` sum-normalized."""
    return Grounding.from_values(vss_values(visual_logits, k=k, sign=sign))


def dice(c: np.ndarray | Grounding, g: np.ndarray | MaskAnnotation) -> float:
    """Soft overlap score 2*sum(c*g) / (sum(c) + sum(g)) in [0, 1]."""
    a = np.asarray(c.weights if isinstance(c, Grounding) else c, dtype=np.float64)
    b = np.asarray(g.overlaps if isinstance(g, MaskAnnotation) else g, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("dice expects 1-d vectors")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInput("dice inputs must be finite")
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidInput("dice inputs must be nonnegative")
    denom = float(np.sum(a) + np.sum(b))
    if denom == 0.0:
        raise InvalidInput("dice undefined when both vectors are all-zero")
    return float(2.0 * np.sum(a * b) / denom)


_WORD_RE = re.compile(r"[a-z0-9']+")


def extract_objects(question: str, vocab: Vocabulary) -> list[str]:
    """Vocabulary object words mentioned in the question, in order, deduped."""
    seen: list[str] = []
    known = {w.lower(): w for w in vocab.object_words}
    for token in _WORD_RE.findall(question.lower()):
        word = known.get(token)
        if word is not None and word not in seen:
            seen.append(word)
    return seen
