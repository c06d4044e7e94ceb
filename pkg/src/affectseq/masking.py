"""Random per-frame masking applied to clip features before the encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from affectseq.errors import ValidationError

REPLACEMENTS = ("zero_vector", "learned_token")


@dataclass(frozen=True)
class MaskConfig:
    p: float = 0.15
    seed: int = 0
    replacement: str = "learned_token"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"mask probability must be in [0, 1], got {self.p}")
        if self.replacement not in REPLACEMENTS:
            raise ValidationError(
                f"replacement must be one of {REPLACEMENTS}, got '{self.replacement}'"
            )


def sample_mask(T: int, cfg: MaskConfig, stream: np.random.Generator) -> np.ndarray:
    """Draw a length-T boolean mask plan; each frame independently with prob p.

    Deterministic given the stream's state; the caller owns stream derivation.
    """
    if T < 1:
        raise ValidationError(f"mask plan length must be >= 1, got {T}")
    # Always consume T draws so downstream stream state is p-independent.
    draws = stream.random(T)
    return draws < cfg.p


def apply_mask(
    clip_features: np.ndarray,
    plan: np.ndarray,
    replacement: str,
    learned_token: np.ndarray | None = None,
) -> np.ndarray:
    """Return a copy of the features with masked rows replaced.

    Unmasked rows are bit-identical to the input; the input is never mutated.
    """
    plan = np.asarray(plan, dtype=bool)
    if plan.ndim != 1 or plan.shape[0] != clip_features.shape[0]:
        raise ValidationError(
            f"mask plan length {plan.shape} does not match clip length "
            f"{clip_features.shape[0]}"
        )
    if replacement not in REPLACEMENTS:
        raise ValidationError(f"unknown replacement '{replacement}'")
    out = np.array(clip_features, copy=True)
    if replacement == "zero_vector":
        out[plan] = 0.0
    else:
        if learned_token is None:
            raise ValidationError("learned_token replacement requires the token vector")
        token = np.asarray(learned_token)
        if token.shape != (clip_features.shape[1],):
            raise ValidationError(
                f"learned token shape {token.shape} does not match feature dim "
                f"{clip_features.shape[1]}"
            )
        out[plan] = token.astype(out.dtype, copy=False)
    return out
