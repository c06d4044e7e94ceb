"""Synthetic corpora with a planted, recoverable feature-label relationship.

Every video shares one corpus-level map derived from the spec seed: an
8-dim latent drifts as a unit-variance AR(1) process, labels are fixed
functions of the latent (interval thresholds for EXPR, per-unit thresholds
for AU, squashed linear readouts for VA), and features embed the latent
into `dim` through an orthonormal matrix plus isotropic noise at 1/snr.
With infinite snr the labels are an exact function of the features, so a
linear probe can recover them; finite snr degrades gracefully.

Validation splits should reuse the training seed with a disjoint
video_offset so both draw from the identical planted map.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from affectseq.errors import ValidationError
from affectseq.features import (
    NUM_AU,
    NUM_EXPR_CLASSES,
    FeatureSequence,
    LabelTrack,
    feature_path,
    label_path,
    write_feature_file,
    write_label_csv,
)

LATENT_DIM = 8
VA_SLOPE = 0.5  # tanh gain; keeps lag-1 autocorrelation high after squashing

# purpose codes for seed derivation
_GLOBAL = 0
_LATENT = 1
_NOISE = 2
_SENTINEL = 3
_SHUFFLE = 4

DEFAULT_EXPR_PRIORS = tuple(1.0 / NUM_EXPR_CLASSES for _ in range(NUM_EXPR_CLASSES))
DEFAULT_AU_PRIORS = tuple(0.1 + 0.025 * j for j in range(NUM_AU))


@dataclass(frozen=True)
class SynthSpec:
    task: str = "EXPR"
    n_videos: int = 4
    frames: int = 400
    dim: int = 32
    seed: int = 0
    snr: float = 10.0
    temporal_smoothness: int = 10
    class_imbalance: tuple = ()
    sentinel_rate: float = 0.05
    shuffle_frames: bool = False
    video_offset: int = 0

    def __post_init__(self):
        if self.task not in ("VA", "EXPR", "AU"):
            raise ValidationError(f"unknown task '{self.task}'")
        if self.n_videos < 1 or self.frames < 1:
            raise ValidationError("need at least one video and one frame")
        if self.dim < LATENT_DIM:
            raise ValidationError(f"dim must be >= {LATENT_DIM}, got {self.dim}")
        if not self.snr > 0.0:
            raise ValidationError(f"snr must be > 0, got {self.snr}")
        if self.temporal_smoothness < 1:
            raise ValidationError("temporal_smoothness must be >= 1")
        if not 0.0 <= self.sentinel_rate < 1.0:
            raise ValidationError(f"sentinel_rate must be in [0, 1), got {self.sentinel_rate}")
        priors = tuple(float(p) for p in self.class_imbalance)
        if not priors:
            priors = DEFAULT_EXPR_PRIORS if self.task == "EXPR" else DEFAULT_AU_PRIORS
        if self.task == "EXPR":
            if len(priors) != NUM_EXPR_CLASSES:
                raise ValidationError(f"EXPR needs {NUM_EXPR_CLASSES} priors")
            if any(p < 0.0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
                raise ValidationError("EXPR priors must be >= 0 and sum to 1")
        elif self.task == "AU":
            if len(priors) != NUM_AU:
                raise ValidationError(f"AU needs {NUM_AU} priors")
            if any(not 0.0 < p < 1.0 for p in priors):
                raise ValidationError("AU priors must each be in (0, 1)")
        object.__setattr__(self, "class_imbalance", priors)

    @property
    def rho(self) -> float:
        s = self.temporal_smoothness
        return 0.0 if s <= 1 else 1.0 - 0.7 / s


@dataclass(frozen=True)
class PlantedMap:
    """Corpus-level label map shared by every video of one spec seed."""

    embed: np.ndarray  # (dim, LATENT_DIM), orthonormal columns
    expr_slopes: np.ndarray  # (8,)
    expr_intercepts: np.ndarray  # (8,)
    expr_dir: np.ndarray  # (LATENT_DIM,), unit
    au_dirs: np.ndarray  # (12, LATENT_DIM), unit rows
    au_thresholds: np.ndarray  # (12,)
    va_dirs: np.ndarray  # (2, LATENT_DIM), unit rows


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *key)))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def build_map(spec: SynthSpec) -> PlantedMap:
    rng = _rng(spec.seed, _GLOBAL)
    embed, _ = np.linalg.qr(rng.standard_normal((spec.dim, LATENT_DIM)))

    # EXPR: class c scores the projection g with the line c*g - b_c; with
    # increasing slopes the argmax partitions the line at the consecutive
    # intersection points b_{c+1} - b_c, which are placed at the Gaussian
    # quantiles of the cumulative priors so marginals match exactly.
    priors = np.asarray(
        spec.class_imbalance if spec.task == "EXPR" else DEFAULT_EXPR_PRIORS, dtype=np.float64
    )
    cum = np.cumsum(priors)[:-1]
    cuts = ndtri(np.clip(cum, 1e-12, 1.0 - 1e-12))
    intercepts = np.concatenate([[0.0], np.cumsum(cuts)])
    slopes = np.arange(NUM_EXPR_CLASSES, dtype=np.float64)
    expr_dir = _unit(rng.standard_normal(LATENT_DIM))

    au_priors = np.asarray(
        spec.class_imbalance if spec.task == "AU" else DEFAULT_AU_PRIORS, dtype=np.float64
    )
    au_dirs = np.stack([_unit(rng.standard_normal(LATENT_DIM)) for _ in range(NUM_AU)])
    au_thresholds = ndtri(1.0 - au_priors)

    va_dirs = np.stack([_unit(rng.standard_normal(LATENT_DIM)) for _ in range(2)])
    return PlantedMap(
        embed=embed,
        expr_slopes=slopes,
        expr_intercepts=intercepts,
        expr_dir=expr_dir,
        au_dirs=au_dirs,
        au_thresholds=au_thresholds,
        va_dirs=va_dirs,
    )


def _latent_walk(spec: SynthSpec, video_index: int) -> np.ndarray:
    """(frames, LATENT_DIM) AR(1) path with unit stationary variance."""
    rng = _rng(spec.seed, _LATENT, video_index)
    eps = rng.standard_normal((spec.frames, LATENT_DIM))
    rho = spec.rho
    if rho == 0.0:
        return eps
    z = np.empty_like(eps)
    z[0] = eps[0]
    innov = math.sqrt(1.0 - rho * rho)
    for t in range(1, spec.frames):
        z[t] = rho * z[t - 1] + innov * eps[t]
    return z


def labels_from_latent(spec: SynthSpec, pmap: PlantedMap, z: np.ndarray) -> np.ndarray:
    if spec.task == "EXPR":
        g = z @ pmap.expr_dir
        scores = g[:, None] * pmap.expr_slopes[None, :] - pmap.expr_intercepts[None, :]
        return scores.argmax(axis=1).astype(np.int64)
    if spec.task == "AU":
        proj = z @ pmap.au_dirs.T
        return (proj > pmap.au_thresholds[None, :]).astype(np.int64)
    va = np.tanh(VA_SLOPE * (z @ pmap.va_dirs.T))
    return va.astype(np.float64)


def generate_video(
    spec: SynthSpec, video_index: int, pmap: PlantedMap | None = None
) -> tuple[FeatureSequence, LabelTrack]:
    """Deterministic (features, labels) for one video index."""
    if pmap is None:
        pmap = build_map(spec)
    abs_index = spec.video_offset + video_index
    z = _latent_walk(spec, abs_index)
    feats = z @ pmap.embed.T
    if math.isfinite(spec.snr):
        noise_rng = _rng(spec.seed, _NOISE, abs_index)
        feats = feats + noise_rng.standard_normal(feats.shape) / spec.snr
    values = labels_from_latent(spec, pmap, z)

    validity = np.ones(spec.frames, dtype=bool)
    if spec.sentinel_rate > 0.0:
        sent_rng = _rng(spec.seed, _SENTINEL, abs_index)
        validity = sent_rng.random(spec.frames) >= spec.sentinel_rate
    vals = values.copy()
    vals[~validity] = 0

    if spec.shuffle_frames:
        perm = _rng(spec.seed, _SHUFFLE, abs_index).permutation(spec.frames)
        feats = feats[perm]
        vals = vals[perm]
        validity = validity[perm]

    video_id = f"video_{abs_index:05d}"
    seq = FeatureSequence(video_id=video_id, data=feats.astype(np.float32))
    track = LabelTrack(task=spec.task, values=vals, validity=validity)
    return seq, track


def generate(spec: SynthSpec, out_dir: Path | str) -> list[str]:
    """Write the corpus (feature files, label CSVs, manifest); returns ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pmap = build_map(spec)
    ids = []
    for i in range(spec.n_videos):
        seq, track = generate_video(spec, i, pmap)
        write_feature_file(seq, feature_path(out, seq.video_id))
        write_label_csv(track, label_path(out, seq.video_id, spec.task))
        ids.append(seq.video_id)
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frames", "task"])
        for vid in ids:
            writer.writerow([vid, spec.frames, spec.task])
    return ids
