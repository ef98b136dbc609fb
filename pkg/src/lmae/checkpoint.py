"""Flat binary checkpoint archive.

Layout (all integers little-endian, arrays in C order):

    magic   b"LMAE"
    u32     format version (1)
    u32     metadata pair count
    per pair:   u16 key length, key bytes (utf-8), u32 value length, value bytes
    u32     array count
    per array:  u16 name length, name bytes (utf-8)
                u8  dtype tag (0=float32, 1=float64, 2=int64, 3=uint8)
                u8  ndim, then ndim * u64 dimensions
                raw array bytes

Entries are sorted by name and the writer emits no timestamps, so saving the
same state twice produces byte-identical files. That property backs the
reproducibility guarantee: rerunning a command with the same seed and config
must reproduce its checkpoint bit for bit.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LMAE"
VERSION = 1

_DTYPE_TAGS = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
    np.dtype(np.uint8): 3,
}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict[str, str] | None = None):
    path = Path(path)
    meta = meta or {}
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack("<I", len(meta)))
    for key in sorted(meta):
        kb = key.encode("utf-8")
        vb = meta[key].encode("utf-8")
        chunks.append(struct.pack("<H", len(kb)) + kb)
        chunks.append(struct.pack("<I", len(vb)) + vb)
    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], order="C")  # keeps 0-d shapes intact
        if arr.dtype not in _DTYPE_TAGS:
            raise ValueError(f"array {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        chunks.append(arr.tobytes(order="C"))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint {self.path}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint archive (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta: dict[str, str] = {}
    (n_meta,) = r.unpack("<I")
    for _ in range(n_meta):
        (klen,) = r.unpack("<H")
        key = r.take(klen).decode("utf-8")
        (vlen,) = r.unpack("<I")
        meta[key] = r.take(vlen).decode("utf-8")
    arrays: dict[str, np.ndarray] = {}
    (n_arrays,) = r.unpack("<I")
    for _ in range(n_arrays):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"{path}: array {name!r} has unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}Q")
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes")
    return arrays, meta
