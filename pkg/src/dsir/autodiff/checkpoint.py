"""Binary parameter checkpoints.

Layout (all integers little-endian u32)::

    b"MASR" | version | metadata length | metadata (UTF-8 JSON object)
    | parameter count
    | per parameter: name length | UTF-8 name | rank | extents... | float32 LE data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MASR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(params, metadata)``; arrays are float32 in file order."""
    buf = Path(path).read_bytes()
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    def u32(count=1):
        vals = struct.unpack(f"<{count}I", read(4 * count))
        return vals if count > 1 else vals[0]

    if read(4) != MAGIC:
        raise CheckpointError(f"{path} is not a MASR checkpoint")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    metadata = json.loads(read(u32()).decode("utf-8"))
    params = {}
    for _ in range(u32()):
        name = read(u32()).decode("utf-8")
        rank = u32()
        shape = tuple(np.atleast_1d(u32(rank))) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(read(4 * count), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return params, metadata
