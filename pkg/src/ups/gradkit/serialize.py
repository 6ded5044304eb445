"""Little-endian binary weight files ("UPSW").

Layout::

    b"UPSW"  u32 version  u32 entry_count
    per entry: u32 name_len, utf-8 name, u32 rank, u64 * rank extents,
               u8 dtype tag, raw little-endian data (row-major)

Complex arrays are written as interleaved (re, im) pairs.
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"UPSW"
VERSION = 1

_TAGS = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("<c16"),
    3: np.dtype("<c8"),
    4: np.dtype("<i8"),
}
_TAG_OF = {np.dtype(v).newbyteorder("="): k for k, v in _TAGS.items()}


class WeightFileError(ValueError):
    pass


def save_weights(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = _TAG_OF.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(struct.pack("<B", tag))
        chunks.append(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFileError(
                f"{self.path}: truncated (wanted {n} bytes at offset {self.pos}, file has {len(self.buf)})"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a UPSW weight file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        (tag,) = r.unpack("<B")
        if tag not in _TAGS:
            raise WeightFileError(f"{path}: entry {name!r} has unknown dtype tag {tag}")
        dt = _TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        out[name] = data.astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise WeightFileError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return out
