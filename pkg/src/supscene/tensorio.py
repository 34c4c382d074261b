"""Binary container of named float64 tensors (checkpoints and descriptor files).

Layout, little-endian::

    magic (4 bytes) | version u16 | count u32
    repeated count times:
        name_len u16 | name utf-8 | rank u32 | dims u32 * rank | doubles
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

CHECKPOINT_MAGIC = b"SSCK"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], magic: bytes = CHECKPOINT_MAGIC) -> bytes:
    parts = [magic, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes, magic: bytes = CHECKPOINT_MAGIC) -> dict[str, np.ndarray]:
    if blob[:4] != magic:
        raise ContainerError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<HI", blob, 4)
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        off = 10
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if off + 8 * size > len(blob):
                raise ContainerError(f"tensor {name!r} runs past the end of the file")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
            off += 8 * size
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    if off != len(blob):
        raise ContainerError(f"{len(blob) - off} trailing bytes")
    return out


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray],
         magic: bytes = CHECKPOINT_MAGIC) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, magic))


def load(path: str | os.PathLike, magic: bytes = CHECKPOINT_MAGIC) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read(), magic)
