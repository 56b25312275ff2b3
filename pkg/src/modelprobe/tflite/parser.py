"""Decoder for TFLite (FlatBuffers schema v3) model files.

Decodes the primary subgraph into a :class:`ModelGraph`: tensors with their
quantization, operators with the builtin options the execution engine needs,
the per-operator layer sequence, and per-layer weight vectors.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import BadMagic, ModelFormatError, Truncated, UnsupportedVersion
from .flat import FlatReader
from .model import (
    TENSOR_TYPE_TO_DTYPE,
    TENSOR_TYPE_TO_NP,
    DType,
    LayerUnit,
    ModelGraph,
    ModelMeta,
    Op,
    ParamVector,
    QuantParams,
    TensorInfo,
    empty_param_vector,
)

FILE_IDENTIFIER = b"TFL3"
SCHEMA_VERSION = 3

# BuiltinOperator codes used by this pipeline (public schema values)
BUILTIN_OP_NAMES = {
    0: "ADD",
    1: "AVERAGE_POOL_2D",
    2: "CONCATENATION",
    3: "CONV_2D",
    4: "DEPTHWISE_CONV_2D",
    6: "DEQUANTIZE",
    9: "FULLY_CONNECTED",
    14: "LOGISTIC",
    17: "MAX_POOL_2D",
    18: "MUL",
    19: "RELU",
    21: "RELU6",
    22: "RESHAPE",
    25: "SOFTMAX",
    34: "PAD",
    40: "MEAN",
    41: "SUB",
    43: "SQUEEZE",
    114: "QUANTIZE",
}

PADDING_NAMES = {0: "SAME", 1: "VALID"}
ACTIVATION_NAMES = {0: "NONE", 1: "RELU", 2: "RELU_N1_TO_1", 3: "RELU6", 4: "TANH", 5: "SIGN_BIT"}

# BuiltinOptions union discriminants (public schema values)
_OPT_CONV2D = 1
_OPT_DWCONV2D = 2
_OPT_POOL2D = 5
_OPT_FULLY_CONNECTED = 8
_OPT_SOFTMAX = 9
_OPT_ADD = 11
_OPT_RESHAPE = 17

# Layers whose input slot 1 holds the kernel compared by parametric similarity
WEIGHT_BEARING_OPS = {"CONV_2D", "DEPTHWISE_CONV_2D", "FULLY_CONNECTED"}


def parse_model(data: bytes, *, name: str = "", source_path: str = "") -> ModelGraph:
    """Decode TFLite bytes into a ModelGraph (primary subgraph only)."""
    if len(data) < 8 or FlatReader(data).identifier() != FILE_IDENTIFIER:
        raise BadMagic("missing TFL3 file identifier at offset 4")
    r = FlatReader(data)
    model = r.root()

    version = r.field_scalar(model, 0, "u32", 0)
    if version != SCHEMA_VERSION:
        raise UnsupportedVersion(f"schema version {version}, expected {SCHEMA_VERSION}")

    opcodes = _read_operator_codes(r, model)
    buffers_pos = _read_offset_vector(r, model, 4)
    subgraphs_pos = _read_offset_vector(r, model, 2)
    if not subgraphs_pos:
        raise ModelFormatError("model has no subgraphs")

    description = ""
    try:
        desc_pos = r.field_indirect(model, 3)
        if desc_pos is not None:
            description = r.string(desc_pos)
    except Truncated:
        pass  # description is optional metadata

    tensors, ops, sg_inputs, sg_outputs = _read_subgraph(r, data, subgraphs_pos[0], opcodes, buffers_pos)
    _validate_topology(tensors, ops, sg_inputs)

    meta = ModelMeta(
        name=name,
        source_path=source_path,
        digest=hashlib.sha256(data).hexdigest(),
        version=version,
        subgraph_count=len(subgraphs_pos),
        description=description,
    )
    graph = ModelGraph(
        meta=meta,
        tensors=tensors,
        ops=ops,
        inputs=tuple(sg_inputs),
        outputs=tuple(sg_outputs),
        layers=[],
        params=[],
    )
    graph.layers = _layer_sequence(graph)
    graph.params = _param_vectors(graph)
    return graph


def to_layer_sequence(model: ModelGraph) -> list[LayerUnit]:
    """Per-operator (identifier, shape, dtype) units in execution order."""
    return list(model.layers)


def extract_params(model: ModelGraph) -> list[ParamVector]:
    """Per-layer weight vectors; weightless layers yield empty vectors."""
    return list(model.params)


def layer_sequence_json(model: ModelGraph) -> list[dict]:
    """JSON-friendly dump of the layer sequence."""
    return [
        {"identifier": u.identifier, "shape": list(u.shape), "dtype": str(u.dtype), "opcode": u.opcode}
        for u in model.layers
    ]


# -- decoding helpers --------------------------------------------------------


def _read_offset_vector(r: FlatReader, table: int, field_id: int) -> list[int]:
    pos = r.field_indirect(table, field_id)
    if pos is None:
        return []
    return r.vector_indirect(pos)


def _read_operator_codes(r: FlatReader, model: int) -> list[tuple[str, int]]:
    codes = []
    for pos in _read_offset_vector(r, model, 1):
        deprecated = r.field_scalar(pos, 0, "i8", 0)
        builtin = r.field_scalar(pos, 3, "i32", 0)
        code = max(builtin, deprecated)
        if code == 32:  # CUSTOM
            custom_pos = r.field_indirect(pos, 1)
            custom = r.string(custom_pos) if custom_pos is not None else ""
            codes.append((f"CUSTOM:{custom}", code))
        else:
            codes.append((BUILTIN_OP_NAMES.get(code, f"BUILTIN_{code}"), code))
    return codes


def _buffer_bytes(r: FlatReader, data: bytes, buffers_pos: list[int], index: int) -> bytes:
    if index <= 0 or index >= len(buffers_pos):
        return b""
    buf = buffers_pos[index]
    payload = r.field_indirect(buf, 0)
    if payload is not None:
        return r.vector_bytes(payload)
    # post-2.x schema allows out-of-line buffers addressed by (offset, size)
    offset = r.field_scalar(buf, 1, "u64", 0)
    size = r.field_scalar(buf, 2, "u64", 0)
    if size:
        if offset + size > len(data):
            raise Truncated(f"buffer {index} range {offset}+{size} exceeds file of {len(data)}")
        return data[offset : offset + size]
    return b""


def _read_quantization(r: FlatReader, tensor_pos: int) -> QuantParams | None:
    q = r.field_indirect(tensor_pos, 4)
    if q is None:
        return None
    scale_pos = r.field_indirect(q, 2)
    if scale_pos is None:
        return None
    scales = r.vector_scalars(scale_pos, "f32")
    if not scales:
        return None
    zp_pos = r.field_indirect(q, 3)
    zero_points = r.vector_scalars(zp_pos, "i64") if zp_pos is not None else [0] * len(scales)
    if len(zero_points) != len(scales):
        zero_points = (zero_points + [0] * len(scales))[: len(scales)]
    axis = r.field_scalar(q, 6, "i32", 0)
    return QuantParams(scales=tuple(scales), zero_points=tuple(int(z) for z in zero_points), axis=axis)


def _decode_tensor(r: FlatReader, data: bytes, buffers_pos: list[int], pos: int, index: int) -> TensorInfo:
    shape_pos = r.field_indirect(pos, 0)
    shape = tuple(r.vector_scalars(shape_pos, "i32")) if shape_pos is not None else ()
    type_code = r.field_scalar(pos, 1, "i8", 0)
    buffer_index = r.field_scalar(pos, 2, "u32", 0)
    name_pos = r.field_indirect(pos, 3)
    tname = r.string(name_pos) if name_pos is not None else ""
    quant = _read_quantization(r, pos)

    payload = _buffer_bytes(r, data, buffers_pos, buffer_index)
    decoded: np.ndarray | None = None
    raw: bytes | None = None
    if payload:
        np_dtype = TENSOR_TYPE_TO_NP.get(type_code)
        if np_dtype is not None and len(payload) % np_dtype.itemsize == 0:
            decoded = np.frombuffer(payload, dtype=np_dtype)
            if all(d >= 0 for d in shape) and decoded.size != int(np.prod(shape, dtype=np.int64)):
                raise ModelFormatError(
                    f"tensor {tname!r}: buffer holds {decoded.size} values for shape {shape}"
                )
        else:
            raw = payload

    return TensorInfo(
        index=index,
        name=tname,
        shape=shape,
        type_code=type_code,
        dtype=TENSOR_TYPE_TO_DTYPE.get(type_code, DType.OTHER),
        quant=quant,
        data=decoded,
        raw=raw,
    )


def _decode_options(r: FlatReader, op_pos: int) -> dict:
    opt_type = r.field_scalar(op_pos, 3, "u8", 0)
    table = r.field_indirect(op_pos, 4)
    if table is None or opt_type == 0:
        return {}
    if opt_type == _OPT_CONV2D:
        return {
            "padding": PADDING_NAMES.get(r.field_scalar(table, 0, "i8", 0), "SAME"),
            "stride_w": r.field_scalar(table, 1, "i32", 0),
            "stride_h": r.field_scalar(table, 2, "i32", 0),
            "activation": ACTIVATION_NAMES.get(r.field_scalar(table, 3, "i8", 0), "NONE"),
            "dilation_w": r.field_scalar(table, 4, "i32", 1),
            "dilation_h": r.field_scalar(table, 5, "i32", 1),
        }
    if opt_type == _OPT_DWCONV2D:
        return {
            "padding": PADDING_NAMES.get(r.field_scalar(table, 0, "i8", 0), "SAME"),
            "stride_w": r.field_scalar(table, 1, "i32", 0),
            "stride_h": r.field_scalar(table, 2, "i32", 0),
            "depth_multiplier": r.field_scalar(table, 3, "i32", 0),
            "activation": ACTIVATION_NAMES.get(r.field_scalar(table, 4, "i8", 0), "NONE"),
            "dilation_w": r.field_scalar(table, 5, "i32", 1),
            "dilation_h": r.field_scalar(table, 6, "i32", 1),
        }
    if opt_type == _OPT_POOL2D:
        return {
            "padding": PADDING_NAMES.get(r.field_scalar(table, 0, "i8", 0), "SAME"),
            "stride_w": r.field_scalar(table, 1, "i32", 0),
            "stride_h": r.field_scalar(table, 2, "i32", 0),
            "filter_w": r.field_scalar(table, 3, "i32", 0),
            "filter_h": r.field_scalar(table, 4, "i32", 0),
            "activation": ACTIVATION_NAMES.get(r.field_scalar(table, 5, "i8", 0), "NONE"),
        }
    if opt_type == _OPT_FULLY_CONNECTED:
        return {
            "activation": ACTIVATION_NAMES.get(r.field_scalar(table, 0, "i8", 0), "NONE"),
            "weights_format": r.field_scalar(table, 1, "i8", 0),
            "keep_num_dims": bool(r.field_scalar(table, 2, "u8", 0)),
        }
    if opt_type == _OPT_SOFTMAX:
        return {"beta": r.field_scalar(table, 0, "f32", 0.0)}
    if opt_type == _OPT_ADD:
        return {"activation": ACTIVATION_NAMES.get(r.field_scalar(table, 0, "i8", 0), "NONE")}
    if opt_type == _OPT_RESHAPE:
        shape_pos = r.field_indirect(table, 0)
        return {"new_shape": r.vector_scalars(shape_pos, "i32") if shape_pos is not None else []}
    return {}


def _read_subgraph(r: FlatReader, data: bytes, sg_pos: int, opcodes: list[tuple[str, int]], buffers_pos: list[int]):
    tensors = [
        _decode_tensor(r, data, buffers_pos, pos, i)
        for i, pos in enumerate(_read_offset_vector(r, sg_pos, 0))
    ]
    inputs_pos = r.field_indirect(sg_pos, 1)
    outputs_pos = r.field_indirect(sg_pos, 2)
    sg_inputs = r.vector_scalars(inputs_pos, "i32") if inputs_pos is not None else []
    sg_outputs = r.vector_scalars(outputs_pos, "i32") if outputs_pos is not None else []

    ops = []
    for pos in _read_offset_vector(r, sg_pos, 3):
        opcode_index = r.field_scalar(pos, 0, "u32", 0)
        if opcode_index >= len(opcodes):
            raise ModelFormatError(f"operator references opcode index {opcode_index} of {len(opcodes)}")
        ins_pos = r.field_indirect(pos, 1)
        outs_pos = r.field_indirect(pos, 2)
        inputs = tuple(r.vector_scalars(ins_pos, "i32")) if ins_pos is not None else ()
        outputs = tuple(r.vector_scalars(outs_pos, "i32")) if outs_pos is not None else ()
        for ti in (*inputs, *outputs):
            if ti != -1 and not 0 <= ti < len(tensors):
                raise ModelFormatError(f"operator references tensor {ti} of {len(tensors)}")
        name, code = opcodes[opcode_index]
        ops.append(
            Op(
                opcode=name,
                raw_code=code,
                inputs=inputs,
                outputs=outputs,
                options=_decode_options(r, pos),
            )
        )
    return tensors, ops, sg_inputs, sg_outputs


def _validate_topology(tensors: list[TensorInfo], ops: list[Op], sg_inputs: list[int]) -> None:
    """Execution order must be topological: no op may read a future output."""
    ready = set(sg_inputs)
    ready.update(t.index for t in tensors if t.is_constant)
    for i, op in enumerate(ops):
        for ti in op.inputs:
            if ti == -1:
                continue
            if ti not in ready:
                raise ModelFormatError(f"op {i} ({op.opcode}) reads tensor {ti} before it is produced")
        ready.update(t for t in op.outputs if t != -1)


def _layer_sequence(graph: ModelGraph) -> list[LayerUnit]:
    units = []
    for op in graph.ops:
        if op.outputs and op.outputs[0] != -1:
            t = graph.tensors[op.outputs[0]]
            units.append(LayerUnit(identifier=t.name, shape=t.shape, dtype=t.dtype, opcode=op.opcode))
        else:
            units.append(LayerUnit(identifier="", shape=(), dtype=DType.OTHER, opcode=op.opcode))
    return units


def _param_vectors(graph: ModelGraph) -> list[ParamVector]:
    params = []
    for i, op in enumerate(graph.ops):
        vec = empty_param_vector(i)
        if op.opcode in WEIGHT_BEARING_OPS and len(op.inputs) > 1 and op.inputs[1] != -1:
            t = graph.tensors[op.inputs[1]]
            if t.data is not None:
                scale = zero_point = None
                if t.quant is not None:
                    scale = t.quant.scale if not t.quant.per_channel else t.quant.scales
                    zero_point = t.quant.zero_point if not t.quant.per_channel else t.quant.zero_points
                vec = ParamVector(
                    layer_index=i,
                    weights=t.data.reshape(-1),
                    weight_shape=t.shape,
                    dtype=t.dtype,
                    scale=scale,
                    zero_point=zero_point,
                )
        params.append(vec)
    return params
