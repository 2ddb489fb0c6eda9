"""Single-file weight container: length-prefixed JSON manifest + f32 blob.

Layout: 8 bytes little-endian unsigned manifest byte length, the UTF-8
JSON manifest, then one contiguous blob of little-endian float32 data.
Manifest entries map tensor names to {shape, dtype, offset, length} with
offsets/lengths in bytes relative to the blob start. One reserved entry,
"__config__", carries the model dimensions, grid, and the vocabulary word
table, since those are not recoverable from tensor shapes alone.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IoError
from ..vocab import Vocabulary
from .config import ModelConfig
from .core import LayerWeights, Model

_CONFIG_KEY = "__config__"
_LEN_STRUCT = struct.Struct("<Q")


def _tensor_names(n_layers: int) -> list[str]:
    names = ["embed.tok", "embed.pos"]
    for i in range(n_layers):
        names += [
            f"layers.{i}.wq",
            f"layers.{i}.wk",
            f"layers.{i}.wv",
            f"layers.{i}.wo",
            f"layers.{i}.norm1",
            f"layers.{i}.norm2",
            f"layers.{i}.mlp.w1",
            f"layers.{i}.mlp.w2",
        ]
    names.append("unembed")
    return names


def save_model(model: Model, path) -> None:
    """Write the model; same model always produces identical bytes."""
    tensors = model.named_tensors()
    manifest: dict = {
        _CONFIG_KEY: {
            "model": model.config.to_manifest(),
            "vocab": model.vocab.to_manifest(),
        }
    }
    blobs: list[bytes] = []
    offset = 0
    for name in _tensor_names(model.config.n_layers):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        manifest[name] = {
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
            "length": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)

    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_LEN_STRUCT.pack(len(encoded)))
            fh.write(encoded)
            for raw in blobs:
                fh.write(raw)
    except OSError as exc:
        raise IoError(f"cannot write model file {path}: {exc}") from exc


def _read_tensor(name: str, entry, blob: bytes) -> np.ndarray:
    if not isinstance(entry, dict):
        raise FormatError(f"{name}: manifest entry is not an object")
    for key in ("shape", "dtype", "offset", "length"):
        if key not in entry:
            raise FormatError(f"{name}: manifest entry missing {key!r}")
    if entry["dtype"] != "f32":
        raise FormatError(f"{name}: unsupported dtype {entry['dtype']!r}")
    shape = tuple(int(d) for d in entry["shape"])
    offset, length = int(entry["offset"]), int(entry["length"])
    expected = int(np.prod(shape)) * 4
    if length != expected:
        raise FormatError(f"{name}: length {length} does not match shape {shape}")
    if offset < 0 or offset + length > len(blob):
        raise FormatError(f"{name}: data range [{offset}, {offset + length}) outside blob")
    return np.frombuffer(blob, dtype="<f4", count=expected // 4, offset=offset).reshape(shape).copy()


def load_model(path) -> Model:
    """Read and validate a container; raises FormatError naming the tensor."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}") from exc

    if len(raw) < _LEN_STRUCT.size:
        raise FormatError("file shorter than the manifest length prefix")
    (manifest_len,) = _LEN_STRUCT.unpack_from(raw)
    header_end = _LEN_STRUCT.size + manifest_len
    if header_end > len(raw):
        raise FormatError("manifest length prefix exceeds file size")
    try:
        manifest = json.loads(raw[_LEN_STRUCT.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object")
    if _CONFIG_KEY not in manifest:
        raise FormatError(f"manifest missing {_CONFIG_KEY!r}")

    blob = raw[header_end:]
    try:
        config = ModelConfig.from_manifest(manifest[_CONFIG_KEY]["model"])
        vocab = Vocabulary.from_manifest(manifest[_CONFIG_KEY]["vocab"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed {_CONFIG_KEY!r} entry: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    for name in _tensor_names(config.n_layers):
        if name not in manifest:
            raise FormatError(f"manifest missing tensor {name!r}")
        tensors[name] = _read_tensor(name, manifest[name], blob)

    layers = tuple(
        LayerWeights(
            wq=tensors[f"layers.{i}.wq"],
            wk=tensors[f"layers.{i}.wk"],
            wv=tensors[f"layers.{i}.wv"],
            wo=tensors[f"layers.{i}.wo"],
            norm1=tensors[f"layers.{i}.norm1"],
            norm2=tensors[f"layers.{i}.norm2"],
            mlp_w1=tensors[f"layers.{i}.mlp.w1"],
            mlp_w2=tensors[f"layers.{i}.mlp.w2"],
        )
        for i in range(config.n_layers)
    )
    try:
        return Model(
            config=config,
            vocab=vocab,
            embed_tok=tensors["embed.tok"],
            embed_pos=tensors["embed.pos"],
            layers=layers,
            unembed=tensors["unembed"],
        )
    except Exception as exc:
        raise FormatError(f"container tensors violate model invariants: {exc}") from exc
