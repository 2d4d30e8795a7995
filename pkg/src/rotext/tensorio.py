"""The ``RTEN`` tensor file: magic, version, ndim, dims, row-major float32 payload.

All header integers are unsigned 32-bit little-endian.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"RTEN"
VERSION = 1
_U32 = struct.Struct("<I")


class TensorFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: byte {offset}: {message}")


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = bytearray(MAGIC)
    header += _U32.pack(VERSION)
    header += _U32.pack(arr.ndim)
    for d in arr.shape:
        header += _U32.pack(d)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(arr.tobytes(order="C"))


def decode_tensor(buf: bytes, path="<bytes>") -> np.ndarray:
    if len(buf) < 12:
        raise TensorFormatError(path, len(buf), "truncated header")
    if buf[:4] != MAGIC:
        raise TensorFormatError(path, 0, f"bad magic {buf[:4]!r}")
    (version,) = _U32.unpack_from(buf, 4)
    if version != VERSION:
        raise TensorFormatError(path, 4, f"unsupported version {version}")
    (ndim,) = _U32.unpack_from(buf, 8)
    end = 12 + 4 * ndim
    if len(buf) < end:
        raise TensorFormatError(path, len(buf), f"truncated dims (ndim={ndim})")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = end + 4 * count
    if len(buf) != expected:
        off = min(len(buf), expected)
        raise TensorFormatError(path, off, f"payload is {len(buf) - end} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=end).reshape(dims).copy()


def read_tensor(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf, path)
