"""Walk a directory of per-video frame folders and emit AFSQ feature files.

Layout contract: `input_dir/<video_id>/<frame>.png` (or jpg/jpeg/bmp) where
`<frame>` is a zero-padded frame number; frames are processed in numeric
order. Each video yields `<video_id>.afsq`, a `validity_<video_id>.csv`
sidecar, and one row in `manifest.csv`.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from affect_exporter.afsq import write_afsq
from affect_exporter.backbone import FEATURE_DIM, Backbone
from affect_exporter.errors import SetupError, StorageError

log = logging.getLogger("affect_exporter")

_FRAME_RE = re.compile(r"^(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)


@dataclass(frozen=True)
class ExportJob:
    input_dir: Path
    output_dir: Path
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise SetupError(f"batch_size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "input_dir", Path(self.input_dir))
        object.__setattr__(self, "output_dir", Path(self.output_dir))


@dataclass(frozen=True)
class VideoResult:
    video_id: str
    frames: int
    dim: int
    invalid: tuple = field(default=())


def _frame_files(video_dir: Path) -> list[Path]:
    found = []
    for entry in video_dir.iterdir():
        m = _FRAME_RE.match(entry.name)
        if entry.is_file() and m:
            found.append((int(m.group(1)), entry))
    found.sort(key=lambda pair: pair[0])
    return [p for _, p in found]


def _atomic_text(path: Path, text: str) -> None:
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _export_video(video_dir: Path, out_dir: Path, backbone: Backbone,
                  batch_size: int) -> VideoResult:
    files = _frame_files(video_dir)
    n = len(files)
    features = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    validity = np.ones(n, dtype=bool)

    for start in range(0, n, batch_size):
        chunk = files[start:start + batch_size]
        pixels, rows = [], []
        for offset, path in enumerate(chunk):
            try:
                with Image.open(path) as img:
                    pixels.append(backbone.preprocess(img))
                rows.append(start + offset)
            except (OSError, Image.DecompressionBombError) as exc:
                validity[start + offset] = False
                log.warning("unreadable frame %s: %s", path, exc)
        if rows:
            features[rows] = backbone.extract(np.stack(pixels))

    video_id = video_dir.name
    write_afsq(out_dir / f"{video_id}.afsq", features)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["frame", "valid"])
    for i in range(n):
        writer.writerow([i, int(validity[i])])
    _atomic_text(out_dir / f"validity_{video_id}.csv", buf.getvalue())

    invalid = tuple(int(i) for i in np.flatnonzero(~validity))
    return VideoResult(video_id, n, FEATURE_DIM, invalid)


def export(job: ExportJob, backbone: Backbone | None = None) -> list[VideoResult]:
    if not job.input_dir.is_dir():
        raise SetupError(f"input directory {job.input_dir} does not exist")
    video_dirs = sorted(d for d in job.input_dir.iterdir() if d.is_dir())
    if not video_dirs:
        raise SetupError(f"no video folders under {job.input_dir}")
    if backbone is None:
        backbone = Backbone.pretrained(job.device)

    job.output_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for video_dir in video_dirs:
        if not _frame_files(video_dir):
            log.warning("skipping %s: no frame images", video_dir)
            continue
        result = _export_video(video_dir, job.output_dir, backbone, job.batch_size)
        log.info("exported %s: %d frames, %d unreadable",
                 result.video_id, result.frames, len(result.invalid))
        results.append(result)
    if not results:
        raise SetupError(f"no exportable videos under {job.input_dir}")

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["video_id", "frames", "dim"])
    for r in results:
        writer.writerow([r.video_id, r.frames, r.dim])
    _atomic_text(job.output_dir / "manifest.csv", buf.getvalue())
    return results
