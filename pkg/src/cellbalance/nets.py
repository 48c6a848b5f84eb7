"""Versioned binary envelope for network parameters and dataset files.

Layout: magic (4 bytes) | version u32 | n_arrays u32 | per array
(ndim u32, dims u32...) | all array data as little-endian float64 |
metadata JSON | metadata length u64.  Saves are atomic (write temp, rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

FORMAT_VERSION = 1


class CorruptFileError(ValueError):
    pass


def pack_arrays(magic: bytes, arrays: list[np.ndarray], metadata: dict) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    meta = json.dumps(metadata, sort_keys=True).encode()
    parts.append(meta)
    parts.append(struct.pack("<Q", len(meta)))
    return b"".join(parts)


def unpack_arrays(blob: bytes, magic: bytes) -> tuple[list[np.ndarray], dict]:
    if len(blob) < 20 or blob[:4] != magic:
        raise CorruptFileError(f"bad magic; expected {magic!r}")
    version, n_arrays = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"unsupported format version {version}")
    (meta_len,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    meta_start = len(blob) - 8 - meta_len
    if meta_start < 12:
        raise CorruptFileError("truncated file")
    try:
        metadata = json.loads(blob[meta_start:len(blob) - 8].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError("corrupt metadata trailer") from e
    off = 12
    arrays = []
    for _ in range(n_arrays):
        if off + 4 > meta_start:
            raise CorruptFileError("truncated array header")
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        end = off + 8 * size
        if end > meta_start:
            raise CorruptFileError("truncated array data")
        arrays.append(np.frombuffer(blob[off:end], dtype="<f8").reshape(shape).copy())
        off = end
    if off != meta_start:
        raise CorruptFileError("trailing bytes before metadata")
    return arrays, metadata


def atomic_write(path, blob: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_arrays(path, magic: bytes, arrays: list[np.ndarray], metadata: dict) -> None:
    atomic_write(path, pack_arrays(magic, arrays, metadata))


def load_arrays(path, magic: bytes) -> tuple[list[np.ndarray], dict]:
    with open(path, "rb") as fh:
        return unpack_arrays(fh.read(), magic)
