"""Intermediate representation of a parsed TFLite model."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DType(enum.Enum):
    UINT8 = "uint8"
    INT8 = "int8"
    INT32 = "int32"
    FLOAT32 = "float32"
    OTHER = "other"

    def __str__(self) -> str:
        return self.value


# TensorType codes from the public schema → comparison dtype
TENSOR_TYPE_TO_DTYPE = {
    0: DType.FLOAT32,
    2: DType.INT32,
    3: DType.UINT8,
    9: DType.INT8,
}

# TensorType codes → numpy dtype for buffer decoding
TENSOR_TYPE_TO_NP = {
    0: np.dtype("<f4"),
    1: np.dtype("<f2"),
    2: np.dtype("<i4"),
    3: np.dtype("<u1"),
    4: np.dtype("<i8"),
    6: np.dtype("<u1"),
    7: np.dtype("<i2"),
    9: np.dtype("<i1"),
    10: np.dtype("<f8"),
}

INTEGER_DTYPES = (DType.UINT8, DType.INT8, DType.INT32)


@dataclass(frozen=True)
class LayerUnit:
    """One layer's comparison attributes: identifier, shape, dtype (+ opcode).

    The opcode is not part of the strict unit equality; it backs the relaxed
    match policy where identifier text is ignored.
    """

    identifier: str
    shape: tuple[int, ...]
    dtype: DType
    opcode: str = ""

    def strict_key(self) -> tuple:
        return (self.identifier, self.shape, self.dtype)

    def relaxed_key(self) -> tuple:
        return (self.opcode, self.shape, self.dtype)


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor or per-channel affine quantization parameters."""

    scales: tuple[float, ...]
    zero_points: tuple[int, ...]
    axis: int = 0

    @property
    def per_channel(self) -> bool:
        return len(self.scales) > 1

    @property
    def scale(self) -> float:
        return self.scales[0]

    @property
    def zero_point(self) -> int:
        return self.zero_points[0]


@dataclass
class TensorInfo:
    index: int
    name: str
    shape: tuple[int, ...]
    type_code: int
    dtype: DType
    quant: QuantParams | None = None
    data: np.ndarray | None = None  # decoded constant buffer, None for activations
    raw: bytes | None = None  # undecodable constant payloads kept verbatim

    @property
    def is_constant(self) -> bool:
        return self.data is not None or self.raw is not None


@dataclass(frozen=True)
class Op:
    opcode: str
    raw_code: int
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    options: dict = field(default_factory=dict)


@dataclass
class ParamVector:
    """Flattened weight tensor of one layer; empty for weightless layers."""

    layer_index: int
    weights: np.ndarray
    weight_shape: tuple[int, ...] = ()
    dtype: DType = DType.OTHER
    scale: float | tuple[float, ...] | None = None
    zero_point: int | tuple[int, ...] | None = None

    def __len__(self) -> int:
        return int(self.weights.size)

    @property
    def quantized(self) -> bool:
        return self.scale is not None


def empty_param_vector(layer_index: int) -> ParamVector:
    return ParamVector(layer_index=layer_index, weights=np.empty(0, dtype=np.float32))


@dataclass
class ModelMeta:
    name: str
    source_path: str
    digest: str
    version: int
    subgraph_count: int
    description: str = ""


@dataclass
class ModelGraph:
    """Parsed model: primary-subgraph tensors, ops, layer sequence, params."""

    meta: ModelMeta
    tensors: list[TensorInfo]
    ops: list[Op]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    layers: list[LayerUnit]
    params: list[ParamVector]

    def __len__(self) -> int:
        return len(self.ops)
