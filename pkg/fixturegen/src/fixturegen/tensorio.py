"""Writer for the tensor container consumed by the modelprobe CLI.

Format (documented by the consumer): 16-byte header = 4-byte magic ``TNSR``,
uint32 dtype code (1 = float32), uint32 rank, uint32 reserved; then rank
little-endian uint32 dims and the little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
FLOAT32_CODE = 1


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<III", FLOAT32_CODE, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    Path(path).write_bytes(header + dims + arr.tobytes())
