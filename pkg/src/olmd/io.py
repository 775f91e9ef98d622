"""Binary tensor container ("OLMT").

Layout: magic ``b"OLMT"``, version byte ``0x01``, dtype byte (``0x00``
float32, ``0x01`` float64), rank byte, ``rank`` little-endian uint32 dims,
then the row-major little-endian payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"OLMT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


def encode_tensor(t) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"cannot store dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError(f"rank {arr.ndim} exceeds 255")
    header = MAGIC + bytes([VERSION, _DTYPE_CODES[dt], arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> Tensor:
    if len(buf) < 7:
        raise TruncatedPayloadError(f"{source}: header truncated ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {buf[:4]!r}")
    version, code, rank = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise UnsupportedDtypeError(f"{source}: unsupported dtype code {code}")
    end = 7 + 4 * rank
    if len(buf) < end:
        raise TruncatedPayloadError(f"{source}: dims truncated")
    shape = struct.unpack(f"<{rank}I", buf[7:end])
    dt = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - end < nbytes:
        raise TruncatedPayloadError(f"{source}: payload has {len(buf) - end} bytes, expected {nbytes}")
    if len(buf) - end > nbytes:
        raise TensorFormatError(f"{source}: {len(buf) - end - nbytes} trailing bytes")
    arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=end).reshape(shape)
    return Tensor(arr.astype(dt.newbyteorder("="), copy=True))


def write_tensor(path, t) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path) -> Tensor:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), source=path)
