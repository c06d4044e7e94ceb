"""On-disk feature/label formats, sequence loading, and clip windowing.

Feature files ("AFSQ") hold one video's frame embeddings as float32,
little-endian, row-major. Label CSVs hold one row per frame with the
task-specific column layout; a sentinel value of -1 or -5 in any column
marks the frame as unannotated.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from affectseq.errors import FormatError, ParseError, StorageError, ValidationError

MAGIC = b"AFSQ"
FORMAT_VERSION = 1

TASKS = ("VA", "EXPR", "AU")
NUM_EXPR_CLASSES = 8
EXPR_CLASS_NAMES = (
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
)
NUM_AU = 12
SENTINELS = (-1.0, -5.0)

_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class FeatureSequence:
    """One video's per-frame embedding matrix, immutable after construction."""

    video_id: str
    data: np.ndarray  # (frames, dim) float32, finite

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(
                f"feature data must be a (frames, dim) matrix, got shape {data.shape}"
            )
        if not np.isfinite(data).all():
            raise ValidationError(f"non-finite feature values in video '{self.video_id}'")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelTrack:
    """Per-frame ground truth for one task, with an explicit validity mask.

    values layout: VA -> (frames, 2) float; EXPR -> (frames,) int;
    AU -> (frames, 12) int in {0, 1}. Entries at invalid frames are zeroed.
    """

    task: str
    values: np.ndarray
    validity: np.ndarray  # (frames,) bool

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task '{self.task}'")
        validity = np.asarray(self.validity, dtype=bool)
        values = np.asarray(self.values)
        if self.task == "VA":
            values = values.astype(np.float64)
            if values.ndim != 2 or values.shape[1] != 2:
                raise ValidationError(f"VA values must be (frames, 2), got {values.shape}")
            ok = values[validity]
            if ok.size and (np.abs(ok) > 1.0).any():
                raise ValidationError("valid VA values must lie in [-1, 1]")
        elif self.task == "EXPR":
            values = values.astype(np.int64)
            if values.ndim != 1:
                raise ValidationError(f"EXPR values must be (frames,), got {values.shape}")
            ok = values[validity]
            if ok.size and ((ok < 0) | (ok >= NUM_EXPR_CLASSES)).any():
                raise ValidationError(f"valid EXPR classes must be in 0..{NUM_EXPR_CLASSES - 1}")
        else:
            values = values.astype(np.int64)
            if values.ndim != 2 or values.shape[1] != NUM_AU:
                raise ValidationError(f"AU values must be (frames, {NUM_AU}), got {values.shape}")
            ok = values[validity]
            if ok.size and ((ok != 0) & (ok != 1)).any():
                raise ValidationError("valid AU indicators must be 0 or 1")
        if values.shape[0] != validity.shape[0]:
            raise ValidationError("values and validity disagree on frame count")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        validity = np.ascontiguousarray(validity)
        validity.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "validity", validity)

    @property
    def frames(self) -> int:
        return self.validity.shape[0]


@dataclass(frozen=True)
class Clip:
    """A fixed-length temporal window of features with aligned labels.

    validity combines label validity with frame realness: padded tail
    frames (only present when the source is shorter than the window) are
    always invalid.
    """

    video_id: str
    start_frame: int
    features: np.ndarray  # (T, dim)
    label_values: np.ndarray
    validity: np.ndarray  # (T,) bool
    real_frames: int  # rows beyond this index are zero padding

    @property
    def length(self) -> int:
        return self.features.shape[0]


def feature_path(directory: Path | str, video_id: str) -> Path:
    return Path(directory) / f"{video_id}.afsq"


def label_path(directory: Path | str, video_id: str, task: str) -> Path:
    return Path(directory) / f"{video_id}.{task.lower()}.csv"


def write_feature_file(seq: FeatureSequence, path: Path | str) -> None:
    """Persist a sequence in the AFSQ binary format (bit-exact round-trip)."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, seq.dim, seq.frames)
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise StorageError(f"cannot write feature file {path}: {exc}") from exc


def read_feature_file(path: Path | str) -> FeatureSequence:
    """Load an AFSQ file; the video id is the file stem."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, dim, frames = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dim == 0:
        raise FormatError(f"{path}: declared dim is 0")
    if frames == 0:
        raise FormatError(f"{path}: declared frame count is 0")
    expected = frames * dim * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(frames, dim)
    return FeatureSequence(video_id=path.stem, data=data)


def _row_floats(row: list[str], line: int) -> list[float]:
    try:
        return [float(cell) for cell in row]
    except ValueError as exc:
        raise ParseError(f"non-numeric cell in {row!r}", line=line) from exc


def parse_label_csv(path: Path | str, task: str) -> LabelTrack:
    """Parse a per-frame label CSV for the given task.

    Rows containing the sentinel (-1 or -5 in any column) are kept but
    marked invalid; their stored values are zeroed.
    """
    if task not in TASKS:
        raise ValidationError(f"unknown task '{task}'")
    path = Path(path)
    ncols = {"VA": 2, "EXPR": 1, "AU": NUM_AU}[task]
    rows: list[list[float]] = []
    valid: list[bool] = []
    try:
        with open(path, newline="") as fh:
            for line_no, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                if len(row) != ncols:
                    raise ParseError(
                        f"expected {ncols} column(s) for {task}, got {len(row)}", line=line_no
                    )
                vals = _row_floats(row, line_no)
                is_sentinel = any(v in SENTINELS for v in vals)
                if is_sentinel:
                    rows.append([0.0] * ncols)
                    valid.append(False)
                    continue
                if task == "VA":
                    if any(abs(v) > 1.0 for v in vals):
                        raise ValidationError(
                            f"{path} line {line_no}: VA value out of [-1, 1]: {vals}"
                        )
                elif task == "EXPR":
                    if vals[0] != int(vals[0]) or not 0 <= vals[0] < NUM_EXPR_CLASSES:
                        raise ValidationError(
                            f"{path} line {line_no}: EXPR class out of range: {vals[0]}"
                        )
                else:
                    if any(v not in (0.0, 1.0) for v in vals):
                        raise ValidationError(
                            f"{path} line {line_no}: AU indicator not in {{0, 1}}: {vals}"
                        )
                rows.append(vals)
                valid.append(True)
    except OSError as exc:
        raise StorageError(f"cannot read label file {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty label file")
    arr = np.asarray(rows, dtype=np.float64)
    if task == "VA":
        values = arr
    elif task == "EXPR":
        values = arr[:, 0].astype(np.int64)
    else:
        values = arr.astype(np.int64)
    return LabelTrack(task=task, values=values, validity=np.asarray(valid, dtype=bool))


def window(seq: FeatureSequence, labels: LabelTrack, T: int, stride: int) -> list[Clip]:
    """Slice a sequence into fixed-length clips.

    Clips start at 0, stride, 2*stride, ... while they fit; if the last
    regular clip does not reach the end of the video, one extra end-aligned
    clip at frames - T is appended. A source shorter than T yields a single
    zero-padded clip whose padded tail is marked invalid.
    """
    if T < 1:
        raise ValidationError(f"window length must be >= 1, got {T}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if labels.frames != seq.frames:
        raise ValidationError(
            f"label track has {labels.frames} frames, features have {seq.frames}"
        )
    frames = seq.frames

    def slice_clip(start: int) -> Clip:
        feats = np.asarray(seq.data[start:start + T])
        vals = np.asarray(labels.values[start:start + T])
        valid = np.asarray(labels.validity[start:start + T])
        return Clip(
            video_id=seq.video_id,
            start_frame=start,
            features=feats,
            label_values=vals,
            validity=valid,
            real_frames=T,
        )

    if frames < T:
        pad = T - frames
        feats = np.zeros((T, seq.dim), dtype=seq.data.dtype)
        feats[:frames] = seq.data
        val_shape = (T,) + labels.values.shape[1:]
        vals = np.zeros(val_shape, dtype=labels.values.dtype)
        vals[:frames] = labels.values
        valid = np.zeros(T, dtype=bool)
        valid[:frames] = labels.validity
        return [
            Clip(
                video_id=seq.video_id,
                start_frame=0,
                features=feats,
                label_values=vals,
                validity=valid,
                real_frames=frames,
            )
        ]

    starts = list(range(0, frames - T + 1, stride))
    if starts[-1] + T < frames:
        starts.append(frames - T)
    return [slice_clip(s) for s in starts]


def write_label_csv(track: LabelTrack, path: Path | str) -> None:
    """Inverse of parse_label_csv; invalid frames are written as sentinels."""
    sentinel_row = {
        "VA": ["-5", "-5"],
        "EXPR": ["-1"],
        "AU": ["-1"] * NUM_AU,
    }[track.task]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for i in range(track.frames):
                if not track.validity[i]:
                    writer.writerow(sentinel_row)
                elif track.task == "VA":
                    writer.writerow([f"{v:.9g}" for v in track.values[i]])
                elif track.task == "EXPR":
                    writer.writerow([str(int(track.values[i]))])
                else:
                    writer.writerow([str(int(v)) for v in track.values[i]])
    except OSError as exc:
        raise StorageError(f"cannot write label file {path}: {exc}") from exc
