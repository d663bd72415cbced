"""Versioned binary checkpoint format for parameter dicts.

Layout (little-endian):  magic ``b"NAVQ"``, u16 version, u32 entry count,
then per entry u16 name length + UTF-8 name + u8 ndim + u32 dims, then all
tensors as row-major float32 in entry order.  A ``<path>.meta.json``
sidecar carries free-form metadata (architecture, training config, epoch).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Params

MAGIC = b"NAVQ"
VERSION = 1


def save_params(path: str | Path, params: Params, metadata: dict | None = None) -> None:
    path = Path(path)
    names = sorted(params)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(names)))
        for name in names:
            arr = params[name]
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            f.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(metadata or {}, indent=2, sort_keys=True))


def load_params(path: str | Path) -> tuple[Params, dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        version, count = struct.unpack("<HI", f.read(6))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            shapes.append((name, dims))
        params: Params = {}
        for name, dims in shapes:
            n = int(np.prod(dims)) if dims else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise ValueError(f"{path}: truncated tensor data for {name}")
            params[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return params, metadata
