"""Model hyperparameters and prompt layout types."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParams, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    """Static shape information for a decoder.

    ``grid`` is (rows, cols) of the visual patch grid; rows*cols is the
    number of visual tokens a prompt's visual span must contain.
    """

    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_seq_len: int
    grid: tuple[int, int]

    def __post_init__(self) -> None:
        if self.n_layers < 1 or self.n_heads < 1:
            raise InvalidParams("n_layers and n_heads must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise InvalidParams("d_model must be divisible by n_heads")
        if self.d_ff < 1 or self.vocab_size < 4 or self.max_seq_len < 2:
            raise InvalidParams("d_ff, vocab_size, or max_seq_len too small")
        rows, cols = self.grid
        if rows < 1 or cols < 1:
            raise InvalidParams("grid dims must be >= 1")
        object.__setattr__(self, "grid", (int(rows), int(cols)))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    def to_manifest(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "grid": list(self.grid),
        }

    @classmethod
    def from_manifest(cls, payload: dict) -> "ModelConfig":
        return cls(
            n_layers=int(payload["n_layers"]),
            n_heads=int(payload["n_heads"]),
            d_model=int(payload["d_model"]),
            d_ff=int(payload["d_ff"]),
            vocab_size=int(payload["vocab_size"]),
            max_seq_len=int(payload["max_seq_len"]),
            grid=tuple(payload["grid"]),
        )


@dataclass(frozen=True)
class SequenceLayout:
    """A prompt: token ids plus the half-open visual span [visual_start, visual_end)."""

    token_ids: tuple[int, ...]
    visual_start: int
    visual_end: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        n = len(self.token_ids)
        if n == 0:
            raise ShapeError("empty prompt")
        if not (0 <= self.visual_start < self.visual_end <= n):
            raise ShapeError(
                f"visual span [{self.visual_start}, {self.visual_end}) does not fit prompt of length {n}"
            )

    @property
    def n_visual(self) -> int:
        return self.visual_end - self.visual_start

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def ids_array(self) -> np.ndarray:
        return np.asarray(self.token_ids, dtype=np.int64)
