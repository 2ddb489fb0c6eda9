"""Grayscale grid renderer: grounding vector -> binary PGM (P5) file."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInput, IoError, ShapeError
from ..grounding import Grounding

_SCALE_EPS = 1e-12


def export_heatmap(grounding, grid: tuple[int, int], path: str) -> None:
    """Write a min-max scaled 8-bit heatmap of the grounding over the grid.

    Accepts a ``Grounding`` or any 1-d array of length rows*cols. A flat
    vector (no dynamic range) renders as mid-gray so "uniform" and
    "empty" stay visually distinct from "peaked at the first patch".
    """
    values = np.asarray(
        grounding.weights if isinstance(grounding, Grounding) else grounding,
        dtype=np.float64,
    )
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise InvalidInput("grid dims must be positive")
    if values.ndim != 1 or values.shape[0] != rows * cols:
        raise ShapeError(
            f"grounding length {values.shape} does not cover a {rows}x{cols} grid"
        )
    if not np.all(np.isfinite(values)):
        raise InvalidInput("grounding values must be finite")

    lo = float(values.min())
    hi = float(values.max())
    if hi - lo < _SCALE_EPS:
        pixels = np.full(values.shape, 128, dtype=np.uint8)
    else:
        scaled = np.round((values - lo) / (hi - lo) * 255.0)
        pixels = scaled.astype(np.uint8)

    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pixels.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write heatmap {path!r}: {exc}") from exc
