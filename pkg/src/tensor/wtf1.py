"""WTF1 tensor files.

Layout: 8-byte magic ``WAUTNSR1``, u8 dtype code, u8 rank, ``rank``
little-endian u32 extents, then the row-major little-endian payload.
"""

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.errors import FormatError

MAGIC = b"WAUTNSR1"
_HEADER = struct.Struct("<8sBB")
_EXTENT = struct.Struct("<I")

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_FOR = {dtype: code for code, dtype in DTYPE_CODES.items()}

PathLike = Union[str, os.PathLike]


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    code = _CODE_FOR.get(np.dtype(dtype))
    if code is None:
        raise FormatError("<memory>", f"dtype {array.dtype} has no WTF1 code")
    if array.ndim > 255:
        raise FormatError("<memory>", f"rank {array.ndim} exceeds 255")
    header = _HEADER.pack(MAGIC, code, array.ndim)
    extents = b"".join(_EXTENT.pack(extent) for extent in array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes(order="C")
    return header + extents + payload


def decode(blob: bytes, source: str = "<memory>") -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FormatError(source, "truncated header")
    magic, code, rank = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(source, f"bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise FormatError(source, f"unknown dtype code {code}")
    offset = _HEADER.size
    if len(blob) < offset + rank * _EXTENT.size:
        raise FormatError(source, "truncated extents")
    shape = tuple(_EXTENT.unpack_from(blob, offset + i * _EXTENT.size)[0] for i in range(rank))
    offset += rank * _EXTENT.size
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(source, f"payload has {len(blob) - offset} bytes, shape {shape} needs {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(str(path), exc.strerror or "unreadable") from None
    return decode(blob, source=str(path))
