"""Binary tensor container used for actor checkpoints and training state.

Layout (all integers little-endian)::

    b"PSAN"                      magic
    u32                          format version
    u32                          tensor count
    per tensor:
        u32 + bytes              UTF-8 name
        u32                      rank
        u64 * rank               dimensions
        f64 * prod(dims)         row-major values

Every tensor is stored as float64, so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"PSAN"
FORMAT_VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes {data[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
            )
        offset = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if offset + 8 * size > len(data):
                raise CheckpointError(f"tensor {name!r} runs past end of file")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(dims).astype(np.float64)
            offset += 8 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupted checkpoint: {exc}") from exc
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after last tensor")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write atomically: a crash mid-write never leaves a half checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(dumps(tensors))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data)
