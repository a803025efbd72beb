"""GLT1 checkpoint format: a flat bag of named f64 arrays.

Layout (all integers little-endian)::

    b"GLT1" | version u32 | count u32
    per array: name_len u32 | utf-8 name | rank u32 | dims u64 * rank | f64 payload
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"GLT1"
VERSION = 1


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() below is C-order regardless of layout
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    try:
        return _decode(blob)
    except struct.error as exc:
        raise ValueError(f"truncated checkpoint: {exc}") from None


def _decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError("not a GLT1 checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if pos + 8 * size > len(blob):
            raise ValueError("truncated checkpoint payload")
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims)
        pos += 8 * size
        out[name] = arr.astype(np.float64)
    if pos != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return out


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, arrays: dict[str, np.ndarray]) -> None:
    atomic_write(path, encode(arrays))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
