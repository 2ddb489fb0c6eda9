"""Hallucination and grounding metrics over generated object sets.

Caption-level metrics treat a caption as the set of vocabulary object
words it mentions; the reference is the scene's annotated object set.
Two naming conventions float around for the caption-level pair: here the
"s" metric is the fraction of captions containing at least one
hallucinated object and the "i" metric is the instance rate, hallucinated
mentions over all mentions, pooled across the corpus.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import InvalidInput, InvalidParams, IoError, ShapeError

log = logging.getLogger(__name__)

_RATE_FIELDS = (
    "accuracy",
    "precision",
    "recall",
    "f1",
    "chair_s",
    "chair_i",
    "chair",
    "cover",
    "hal",
    "cog",
    "amber",
    "mean_dice",
)


def _as_sets(items: Sequence[Iterable[str]]) -> list[set[str]]:
    return [set(x) for x in items]


def chair_metrics(
    generated: Sequence[Iterable[str]], annotated: Sequence[Iterable[str]]
) -> tuple[float, float]:
    """Corpus hallucination rates: (caption rate, object-instance rate).

    The first element is the fraction of captions mentioning at least one
    object absent from their annotation; the second pools object mentions
    over the whole corpus and reports the hallucinated fraction.
    """
    if len(generated) == 0:
        raise InvalidInput("need at least one caption")
    if len(generated) != len(annotated):
        raise ShapeError(
            f"{len(generated)} captions vs {len(annotated)} annotations"
        )
    gen = _as_sets(generated)
    ann = _as_sets(annotated)
    mentions = 0
    hallucinated = 0
    dirty_captions = 0
    for r, a in zip(gen, ann):
        extra = r - a
        mentions += len(r)
        hallucinated += len(extra)
        dirty_captions += 1 if extra else 0
    chair_s = dirty_captions / len(gen)
    chair_i = hallucinated / mentions if mentions else 0.0
    return chair_s, chair_i


@dataclass(frozen=True)
class AmberScores:
    chair: float
    cover: float
    hal: float
    cog: float
    amber: float


def amber_metrics(
    generated: Sequence[Iterable[str]],
    annotated: Sequence[Iterable[str]],
    hallu_targets: Sequence[Iterable[str]],
    f1: float,
) -> AmberScores:
    """Per-caption set scores, averaged, plus the combined score.

    Per caption with generated set R', annotation A and target set H:
    chair = 1 - |R' n A| / |R'|, cover = |R' n A| / |A|,
    cog = |R' n H| / |R'|; hal is the fraction of captions with
    chair > 0, and the combined score is (1 - chair + f1) / 2.
    A caption with an empty generated set scores 0 for chair and cog
    (logged); an empty annotation scores 0 for cover (logged).
    """
    if len(generated) == 0:
        raise InvalidInput("need at least one caption")
    if not (len(generated) == len(annotated) == len(hallu_targets)):
        raise ShapeError("generated/annotated/hallu_targets lengths disagree")
    if not np.isfinite(f1) or not 0.0 <= f1 <= 1.0:
        raise InvalidParams(f"f1 must lie in [0, 1], got {f1}")
    gen = _as_sets(generated)
    ann = _as_sets(annotated)
    tgt = _as_sets(hallu_targets)

    chairs, covers, cogs, hals = [], [], [], []
    for i, (r, a, h) in enumerate(zip(gen, ann, tgt)):
        if not r:
            log.warning("caption %d generated no objects; chair/cog scored 0", i)
            chairs.append(0.0)
            cogs.append(0.0)
        else:
            chairs.append(1.0 - len(r & a) / len(r))
            cogs.append(len(r & h) / len(r))
        if not a:
            log.warning("caption %d has an empty annotation; cover scored 0", i)
            covers.append(0.0)
        else:
            covers.append(len(r & a) / len(a))
        hals.append(1.0 if chairs[-1] > 0 else 0.0)

    chair = float(np.mean(chairs))
    return AmberScores(
        chair=chair,
        cover=float(np.mean(covers)),
        hal=float(np.mean(hals)),
        cog=float(np.mean(cogs)),
        amber=(1.0 - chair + f1) / 2.0,
    )


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean with the 0/0 convention mapped to 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def point_biserial(values: np.ndarray, labels: np.ndarray) -> float:
    """Correlation between a continuous score and a binary label.

    r = (mean1 - mean0) / std * sqrt(n1 * n0 / n^2), population std.
    """
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels)
    if v.ndim != 1 or y.ndim != 1 or v.shape != y.shape:
        raise ShapeError("values and labels must be equal-length vectors")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("values must be finite")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1, False, True}:
        raise InvalidInput("labels must be binary")
    y = y.astype(bool)
    n1 = int(y.sum())
    n0 = int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise InvalidInput("both label classes must be present")
    std = float(np.std(v))
    if std == 0.0:
        raise InvalidInput("values have zero variance")
    m1 = float(v[y].mean())
    m0 = float(v[~y].mean())
    n = n1 + n0
    return (m1 - m0) / std * np.sqrt(n1 * n0 / (n * n))


def ranking_auc(values: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outscores a random negative; ties count half."""
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if v.ndim != 1 or v.shape != y.shape:
        raise ShapeError("values and labels must be equal-length vectors")
    n1 = int(y.sum())
    n0 = int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise InvalidInput("both label classes must be present")
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v), dtype=np.float64)
    sorted_v = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    u = float(ranks[y].sum()) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


@dataclass(frozen=True)
class EvalReport:
    """One evaluation run's scores plus enough metadata to reproduce it.

    Fields that a given task does not produce stay None; every rate that
    is present must land in [0, 1].
    """

    task: str
    n_items: int
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    chair_s: float | None = None
    chair_i: float | None = None
    chair: float | None = None
    cover: float | None = None
    hal: float | None = None
    cog: float | None = None
    amber: float | None = None
    mean_dice: float | None = None
    dice_by_size: dict | None = None
    unmapped: int = 0
    mean_caption_len: float | None = None
    config: dict | None = None
    seed: int | None = None
    timings: dict | None = None

    def __post_init__(self) -> None:
        if self.n_items < 0:
            raise InvalidParams("n_items must be >= 0")
        for name in _RATE_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1], got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


def save_report(report: EvalReport, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report {path!r}: {exc}") from exc
