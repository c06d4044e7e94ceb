"""Checkpoint serialization.

Layout, little-endian throughout:

    magic "AFCK" | u32 version | u32 json_len | config JSON (sorted keys)
    u32 n_tensors | tensor records...
    u8 has_opt | [u64 opt_step | u32 n_tensors | tensor records...]

One tensor record is (u32 name_len, name utf-8, u32 rank, rank * u64 dims,
float32 data). Optimizer moment tensors are stored under "m.<param>" and
"v.<param>" names. Tensors are written in sorted-name order so identical
state produces identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from affectseq.errors import FormatError, StorageError
from affectseq.model import ModelConfig, param_names
from affectseq.optim import AdamWConfig, OptState

MAGIC = b"AFCK"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_MAX_NAME = 4096
_MAX_RANK = 8


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: dict[str, np.ndarray]
    opt_cfg: AdamWConfig | None = None
    opt_state: OptState | None = None
    extra: dict = field(default_factory=dict)


def _write_tensors(out: list[bytes], tensors: dict[str, np.ndarray]) -> None:
    out.append(_U32.pack(len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        out.append(_U32.pack(len(nb)))
        out.append(nb)
        out.append(_U32.pack(arr.ndim))
        for d in arr.shape:
            out.append(_U64.pack(d))
        out.append(arr.tobytes())


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated checkpoint")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def _read_tensors(r: _Reader) -> dict[str, np.ndarray]:
    n = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        name_len = r.u32()
        if name_len > _MAX_NAME:
            raise FormatError(f"{r.path}: implausible tensor name length {name_len}")
        name = r.take(name_len).decode("utf-8")
        rank = r.u32()
        if rank > _MAX_RANK:
            raise FormatError(f"{r.path}: implausible tensor rank {rank}")
        dims = tuple(r.u64() for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        data = np.frombuffer(r.take(count * 4), dtype="<f4").reshape(dims)
        tensors[name] = data.astype(np.float32).copy()
    return tensors


def save_checkpoint(
    path: str | os.PathLike,
    model_cfg: ModelConfig,
    params: dict[str, np.ndarray],
    opt_cfg: AdamWConfig | None = None,
    opt_state: OptState | None = None,
    extra: dict | None = None,
) -> None:
    """Atomic write: serialize to a sibling temp file, then rename."""
    cfg_json = json.dumps(
        {
            "extra": extra or {},
            "model": model_cfg.to_dict(),
            "optim": opt_cfg.to_dict() if opt_cfg is not None else None,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    out: list[bytes] = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(cfg_json)), cfg_json]
    _write_tensors(out, params)
    if opt_state is not None:
        out.append(b"\x01")
        out.append(_U64.pack(opt_state.t))
        moments = {f"m.{k}": v for k, v in opt_state.m.items()}
        moments.update({f"v.{k}": v for k, v in opt_state.v.items()})
        _write_tensors(out, moments)
    else:
        out.append(b"\x00")

    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(b"".join(out))
        os.replace(tmp, path)
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e

    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg_len = r.u32()
    try:
        cfg = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt config block: {e}") from e

    try:
        model_cfg = ModelConfig.from_dict(cfg["model"])
        opt_cfg = AdamWConfig.from_dict(cfg["optim"]) if cfg.get("optim") else None
        extra = cfg.get("extra", {})
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: config block missing fields: {e}") from e

    params = _read_tensors(r)
    expected = set(param_names(model_cfg))
    if set(params) != expected:
        missing = sorted(expected - set(params))
        surplus = sorted(set(params) - expected)
        raise FormatError(
            f"{path}: stored tensors do not match the declared model config "
            f"(missing {missing}, unexpected {surplus})"
        )
    opt_state = None
    has_opt = r.take(1)[0]
    if has_opt == 1:
        t = r.u64()
        moments = _read_tensors(r)
        m = {k[2:]: v for k, v in moments.items() if k.startswith("m.")}
        v = {k[2:]: v for k, v in moments.items() if k.startswith("v.")}
        if set(m) != set(params) or set(v) != set(params):
            raise FormatError(f"{path}: optimizer state does not match parameters")
        opt_state = OptState(m=m, v=v, t=t)
    elif has_opt != 0:
        raise FormatError(f"{path}: corrupt optimizer-state marker {has_opt}")
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes")

    return Checkpoint(
        model_cfg=model_cfg, params=params, opt_cfg=opt_cfg, opt_state=opt_state, extra=extra
    )
