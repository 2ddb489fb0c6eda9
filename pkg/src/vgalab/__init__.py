"""vgalab: a desk-scale laboratory for vision-guided attention.

A tiny decoder with constructed (planted) visual semantics, grounding
maps read off its own visual-token logits, attention guidance that
steers generation toward visually supported tokens, and a synthetic
evaluation kit for existence questions and captions.
"""
from . import grounding, numerics, vga
from .errors import (
    CapacityError,
    ConfigError,
    FormatError,
    InvalidInput,
    InvalidParams,
    InvalidSpec,
    IoError,
    ShapeError,
    VgalabError,
)
from .mllm import (
    GuidanceRow,
    Model,
    ModelConfig,
    PlantedSpec,
    SequenceLayout,
    build_planted_model,
    build_random_model,
    load_model,
    save_model,
)
from .vocab import DEFAULT_OBJECT_WORDS, Vocabulary, make_vocab

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "DEFAULT_OBJECT_WORDS",
    "FormatError",
    "GuidanceRow",
    "InvalidInput",
    "InvalidParams",
    "InvalidSpec",
    "IoError",
    "Model",
    "ModelConfig",
    "PlantedSpec",
    "SequenceLayout",
    "ShapeError",
    "VgalabError",
    "Vocabulary",
    "__version__",
    "build_planted_model",
    "build_random_model",
    "grounding",
    "load_model",
    "make_vocab",
    "numerics",
    "save_model",
    "vga",
    "vocab",
]
