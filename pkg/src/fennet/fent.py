"""FENT binary container for dense tensors and bit masks.

Layout (all little-endian)::

    b"FENT" | u32 version (=1) | u8 ndims | ndims x u64 dims | payload

The payload is either ``prod(dims)`` float64 values in C order, or
``ceil(prod(dims) / 8)`` bytes of packed mask bits (first index slowest,
bit 0 of each byte holds the earliest entry). The header does not record
which; readers tell the two apart by payload length.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import MAX_MODES

MAGIC = b"FENT"
VERSION = 1


def _header(dims) -> bytes:
    dims = tuple(int(d) for d in dims)
    if len(dims) > MAX_MODES:
        raise FormatError(f"FENT supports at most {MAX_MODES} modes")
    return MAGIC + struct.pack("<IB", VERSION, len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)


def encode_tensor(T: np.ndarray) -> bytes:
    T = np.ascontiguousarray(T, dtype="<f8")
    return _header(T.shape) + T.tobytes(order="C")


def encode_mask(mask: np.ndarray) -> bytes:
    mask = np.ascontiguousarray(mask, dtype=bool)
    bits = np.packbits(mask.ravel(order="C"), bitorder="little")
    return _header(mask.shape) + bits.tobytes()


def decode(data: bytes) -> np.ndarray:
    """Decode a FENT blob into a float64 tensor or a boolean mask."""
    if len(data) < 9 or data[:4] != MAGIC:
        raise FormatError("not a FENT file (bad magic)")
    version, ndims = struct.unpack_from("<IB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported FENT version {version}")
    if ndims > MAX_MODES:
        raise FormatError(f"FENT declares {ndims} modes")
    offset = 9 + 8 * ndims
    if len(data) < offset:
        raise FormatError("truncated FENT header")
    dims = struct.unpack_from(f"<{ndims}Q", data, 9)
    count = int(np.prod(dims)) if dims else 1
    payload = data[offset:]
    if len(payload) == 8 * count:
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return arr.reshape(dims)
    if len(payload) == (count + 7) // 8:
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
        return bits[:count].astype(bool).reshape(dims)
    raise FormatError(f"payload of {len(payload)} bytes matches neither layout for dims {dims}")


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, T: np.ndarray) -> None:
    atomic_write(path, encode_tensor(T))


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write(path, encode_mask(mask))


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def read_tensor(path) -> np.ndarray:
    arr = read(path)
    if arr.dtype == bool:
        raise FormatError(f"{path}: expected a dense tensor, found a mask")
    return arr


def read_mask(path) -> np.ndarray:
    arr = read(path)
    if arr.dtype != bool:
        raise FormatError(f"{path}: expected a mask, found a dense tensor")
    return arr
