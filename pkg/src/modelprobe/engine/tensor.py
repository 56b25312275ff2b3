"""Tensor value type and its binary/CSV container formats.

Binary container: 16-byte header (4-byte magic ``TNSR``, uint32 dtype code,
uint32 rank, uint32 reserved zero), followed by rank little-endian uint32
dims and the little-endian payload. CSV is accepted for rank <= 2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError

MAGIC = b"TNSR"
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<u1"), 3: np.dtype("<i1"), 4: np.dtype("<i4")}
_DTYPE_TO_CODE = {v: k for k, v in _CODE_TO_DTYPE.items()}


@dataclass
class Tensor:
    shape: tuple[int, ...]
    dtype: str
    data: np.ndarray  # flat, row-major

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr)
        return cls(shape=tuple(arr.shape), dtype=str(arr.dtype), data=arr.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dtype = np.dtype(arr.dtype.str.replace(">", "<"))
    if dtype not in _DTYPE_TO_CODE:
        arr = arr.astype(np.float32)
        dtype = np.dtype("<f4")
    header = MAGIC + struct.pack("<III", _DTYPE_TO_CODE[dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + dims + arr.astype(dtype).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_csv(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a tensor container (bad magic)")
    code, rank, _ = struct.unpack("<III", raw[4:16])
    if code not in _CODE_TO_DTYPE:
        raise ModelFormatError(f"{path}: unknown dtype code {code}")
    if len(raw) < 16 + 4 * rank:
        raise ModelFormatError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{rank}I", raw[16 : 16 + 4 * rank]) if rank else ()
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = raw[16 + 4 * rank :]
    if len(payload) != count * dtype.itemsize:
        raise ModelFormatError(f"{path}: payload holds {len(payload)} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text().strip().splitlines():
        line = line.strip()
        if line:
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        return np.empty((0,), dtype=np.float32)
    arr = np.asarray(rows, dtype=np.float32)
    return arr[0] if arr.shape[0] == 1 else arr
