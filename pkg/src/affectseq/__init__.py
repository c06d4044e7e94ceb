"""Temporal affect classification over per-frame feature sequences.

A transformer encoder consumes fixed-length windows of frame embeddings,
optionally with random frame masking during training, and predicts per-frame
valence/arousal, expression classes, or action units. Training uses focal
loss for the classification tasks and CCC loss for valence/arousal.
"""

from affectseq.errors import (
    AffectSeqError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    NumericError,
    ParseError,
    StorageError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AffectSeqError",
    "ConfigError",
    "FormatError",
    "InsufficientDataError",
    "NumericError",
    "ParseError",
    "StorageError",
    "ValidationError",
    "__version__",
]
