"""Binary weight files.

Layout (all integers little-endian)::

    b"MVFW"  u32 version  u32 entry_count
    entry*:  u32 name_len  name(utf-8)  u8 dtype(0=f32, 1=f64)  u8 rank
             u32 dim * rank  payload (little-endian, C order)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import MvfError

MAGIC = b"MVFW"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {("f", 4): 0, ("f", 8): 1}


class WeightFileError(MvfError):
    pass


def _write(f: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
        if code is None:
            raise WeightFileError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<BB", code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise WeightFileError("truncated weight file")
    return data


def _read(f: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(f, 4) != MAGIC:
        raise WeightFileError("not a weight file (bad magic)")
    version, count = struct.unpack("<II", _read_exact(f, 8))
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, n).decode("utf-8")
        code, rank = struct.unpack("<BB", _read_exact(f, 2))
        if code not in _DTYPES:
            raise WeightFileError(f"{name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
        dt = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(_read_exact(f, size), dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="))
    if f.read(1):
        raise WeightFileError("trailing bytes after last entry")
    return out


def save_weights(path: Union[str, Path], tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        _write(f, tensors)


def load_weights(path: Union[str, Path]) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return _read(f)
