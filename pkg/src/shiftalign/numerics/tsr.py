"""TSR1 tensor files.

Layout: ``b"TSR1"``, u8 dtype code (0 = f32, 1 = f64), u8 rank, rank x u64
little-endian extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"TSR1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TsrFormatError(ValueError):
    pass


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float32)
    code = _CODES[arr.dtype]
    head = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TsrFormatError("missing TSR1 magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise TsrFormatError(f"unknown dtype code {code}")
    off = 6 + 8 * rank
    if len(buf) < off:
        raise TsrFormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 6)
    dt = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(buf) != off + n * dt.itemsize:
        raise TsrFormatError(f"payload is {len(buf) - off} bytes, expected {n * dt.itemsize}")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape)
    return arr.astype(dt.newbyteorder("="))


def save(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        return decode(fh.read())
