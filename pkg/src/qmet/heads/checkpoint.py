"""Flat binary checkpoints.

Layout (little endian)::

    b"QMET1"
    u32 count
    count x { u32 name_len, name (utf-8), u32 ndim, ndim x u64 dims, float64 payload }

Entries are written in sorted name order, so equal parameters give equal bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "dumps", "loads", "save_checkpoint", "load_checkpoint"]

MAGIC = b"QMET1"


def dumps(params: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name]
        if not isinstance(arr, np.ndarray):
            arr = getattr(arr, "data", arr)
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)))
        out.append(key)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError("not a QMET1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (klen,) = take("<I")
        name = blob[pos : pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        params[name] = arr
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return params


def save_checkpoint(path, params: dict) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
