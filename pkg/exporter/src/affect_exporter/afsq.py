"""Writer for the AFSQ binary feature format.

The format is the contract between this tool and the affectseq trainer:
a `<4sIIQ` little-endian header (magic, version, dim, frames) followed by
the row-major float32 payload. The constants here must stay byte-compatible
with the affectseq reader; they are intentionally not imported from it.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from affect_exporter.errors import StorageError

MAGIC = b"AFSQ"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIQ")


def write_afsq(path: Path | str, data: np.ndarray) -> None:
    """Atomically write a (frames, dim) float32 matrix as an AFSQ file."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"feature matrix must be (frames, dim), got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("feature matrix contains non-finite values")
    path = Path(path)
    frames, dim = data.shape
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, dim, frames)
    blob += np.ascontiguousarray(data, dtype="<f4").tobytes()
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write feature file {path}: {exc}") from exc
