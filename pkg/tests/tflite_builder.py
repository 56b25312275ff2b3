"""Minimal FlatBuffers writer used to build synthetic TFLite fixtures.

Implements the back-to-front building scheme of the reference FlatBuffers
implementation (prepend-only buffer, end-relative offsets, per-table vtables)
for exactly the subset of the TFLite schema the tests need. The output is a
valid flatbuffer: the TFLite interpreter itself loads files produced here
(exercised in the fixture generator's test suite).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class Builder:
    def __init__(self):
        self.buf = bytearray()
        self.minalign = 1

    @property
    def head(self) -> int:
        return len(self.buf)

    def _prep(self, size: int, additional: int) -> None:
        if size > self.minalign:
            self.minalign = size
        pad = (-(len(self.buf) + additional)) & (size - 1)
        self.buf[0:0] = b"\x00" * pad

    def _place(self, data: bytes) -> None:
        self.buf[0:0] = data

    def push_scalar(self, fmt: str, size: int, value) -> None:
        self._prep(size, 0)
        self._place(struct.pack("<" + fmt, value))

    def push_uoffset(self, target: int) -> None:
        """Prepend a uoffset referring to an object at end-relative `target`."""
        self._prep(4, 0)
        self._place(struct.pack("<I", self.head + 4 - target))

    def create_string(self, s: str) -> int:
        data = s.encode("utf-8")
        self._prep(4, len(data) + 1)
        self._place(data + b"\x00")
        self.push_scalar("I", 4, len(data))
        return self.head

    def create_scalar_vector(self, fmt: str, size: int, values) -> int:
        values = list(values)
        self._prep(4, size * len(values))
        self._prep(size, size * len(values))
        for v in reversed(values):
            self._place(struct.pack("<" + fmt, v))
        self.push_scalar("I", 4, len(values))
        return self.head

    def create_byte_vector(self, data: bytes, align: int = 16) -> int:
        # TFLite buffer payloads are force-aligned to 16
        self._prep(4, len(data))
        self._prep(align, len(data))
        self._place(bytes(data))
        self.push_scalar("I", 4, len(data))
        return self.head

    def create_offset_vector(self, offsets: list[int]) -> int:
        self._prep(4, 4 * len(offsets))
        for off in reversed(offsets):
            self.push_uoffset(off)
        self.push_scalar("I", 4, len(offsets))
        return self.head

    def create_table(self, fields: list[tuple[int, str, object]]) -> int:
        """Build a table from (field_id, kind, value) entries.

        kind is a scalar format ('b','B','h','H','i','I','q','f') or 'offset'
        for children already built (value = end-relative offset).
        """
        sizes = {"b": 1, "B": 1, "h": 2, "H": 2, "i": 4, "I": 4, "q": 8, "f": 4}
        data_start = self.head
        positions: dict[int, int] = {}
        # write fields back-to-front; order within the table does not matter
        for fid, kind, value in fields:
            if kind == "offset":
                self.push_uoffset(int(value))
            else:
                self.push_scalar(kind, sizes[kind], value)
            positions[fid] = self.head
        # soffset placeholder marks the table start
        self.push_scalar("i", 4, 0)
        table_pos = self.head
        max_id = max(positions) if positions else -1
        vt_len = 4 + 2 * (max_id + 1)
        entries = [vt_len, table_pos - data_start]
        for fid in range(max_id + 1):
            entries.append(table_pos - positions[fid] if fid in positions else 0)
        self._prep(2, 2 * len(entries))
        for e in reversed(entries):
            self._place(struct.pack("<H", e))
        vt_pos = self.head
        # patch the soffset: vtable location = table location - soffset
        idx = len(self.buf) - table_pos
        self.buf[idx : idx + 4] = struct.pack("<i", vt_pos - table_pos)
        return table_pos

    def finish(self, root: int, identifier: bytes) -> bytes:
        self._prep(self.minalign, 4 + len(identifier))
        self._place(identifier)
        self.push_scalar("I", 4, self.head + 4 - root)
        return bytes(self.buf)


# -- TFLite model assembly ---------------------------------------------------

TENSOR_TYPE = {"float32": 0, "int32": 2, "uint8": 3, "int8": 9}
OPCODES = {
    "ADD": 0,
    "AVERAGE_POOL_2D": 1,
    "CONV_2D": 3,
    "DEPTHWISE_CONV_2D": 4,
    "FULLY_CONNECTED": 9,
    "MAX_POOL_2D": 17,
    "MUL": 18,
    "RELU": 19,
    "RELU6": 21,
    "RESHAPE": 22,
    "SOFTMAX": 25,
    "QUANTIZE": 114,
}
PADDING = {"SAME": 0, "VALID": 1}
ACTIVATION = {"NONE": 0, "RELU": 1, "RELU6": 3}
OPTION_TYPE = {
    "CONV_2D": 1,
    "DEPTHWISE_CONV_2D": 2,
    "AVERAGE_POOL_2D": 5,
    "MAX_POOL_2D": 5,
    "FULLY_CONNECTED": 8,
    "SOFTMAX": 9,
    "ADD": 11,
    "RESHAPE": 17,
}


@dataclass
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    dtype: str = "float32"
    data: np.ndarray | bytes | None = None
    scales: tuple[float, ...] = ()
    zero_points: tuple[int, ...] = ()
    quant_axis: int = 0


@dataclass
class OpSpec:
    opcode: str
    inputs: list[int]
    outputs: list[int]
    options: dict = field(default_factory=dict)


def _options_table(b: Builder, op: OpSpec) -> tuple[int, int]:
    o = op.options
    kind = op.opcode
    if kind not in OPTION_TYPE:
        return 0, 0
    if kind == "CONV_2D":
        fields = [
            (0, "b", PADDING[o.get("padding", "SAME")]),
            (1, "i", o.get("stride_w", 1)),
            (2, "i", o.get("stride_h", 1)),
            (3, "b", ACTIVATION[o.get("activation", "NONE")]),
        ]
    elif kind == "DEPTHWISE_CONV_2D":
        fields = [
            (0, "b", PADDING[o.get("padding", "SAME")]),
            (1, "i", o.get("stride_w", 1)),
            (2, "i", o.get("stride_h", 1)),
            (3, "i", o.get("depth_multiplier", 1)),
            (4, "b", ACTIVATION[o.get("activation", "NONE")]),
        ]
    elif kind in ("AVERAGE_POOL_2D", "MAX_POOL_2D"):
        fields = [
            (0, "b", PADDING[o.get("padding", "VALID")]),
            (1, "i", o.get("stride_w", 1)),
            (2, "i", o.get("stride_h", 1)),
            (3, "i", o.get("filter_w", 2)),
            (4, "i", o.get("filter_h", 2)),
            (5, "b", ACTIVATION[o.get("activation", "NONE")]),
        ]
    elif kind == "FULLY_CONNECTED":
        fields = [(0, "b", ACTIVATION[o.get("activation", "NONE")])]
    elif kind == "SOFTMAX":
        fields = [(0, "f", o.get("beta", 1.0))]
    elif kind == "ADD":
        fields = [(0, "b", ACTIVATION[o.get("activation", "NONE")])]
    elif kind == "RESHAPE":
        shape_vec = b.create_scalar_vector("i", 4, o.get("new_shape", []))
        fields = [(0, "offset", shape_vec)]
    return OPTION_TYPE[kind], b.create_table(fields)


def build_model(
    tensors: list[TensorSpec],
    ops: list[OpSpec],
    inputs: list[int],
    outputs: list[int],
    *,
    version: int = 3,
    description: str = "",
    identifier: bytes = b"TFL3",
    extra_subgraphs: int = 0,
) -> bytes:
    """Assemble a single-subgraph TFLite flatbuffer from specs."""
    b = Builder()

    # buffers: index 0 empty by convention, then one per constant tensor
    buffer_offsets = [b.create_table([])]
    tensor_buffer_index = []
    for t in tensors:
        if t.data is None:
            tensor_buffer_index.append(0)
        else:
            raw = t.data.tobytes() if isinstance(t.data, np.ndarray) else bytes(t.data)
            vec = b.create_byte_vector(raw)
            buffer_offsets.append(b.create_table([(0, "offset", vec)]))
            tensor_buffer_index.append(len(buffer_offsets) - 1)

    opcode_list = sorted({op.opcode for op in ops})
    opcode_index = {name: i for i, name in enumerate(opcode_list)}
    opcode_offsets = []
    for name in opcode_list:
        code = OPCODES[name]
        fields = [(0, "b", min(code, 127)), (2, "i", 1), (3, "i", code)]
        opcode_offsets.append(b.create_table(fields))

    tensor_offsets = []
    for i, t in enumerate(tensors):
        quant = 0
        if t.scales:
            scale_vec = b.create_scalar_vector("f", 4, t.scales)
            zp_vec = b.create_scalar_vector("q", 8, t.zero_points or [0] * len(t.scales))
            quant = b.create_table([(2, "offset", scale_vec), (3, "offset", zp_vec), (6, "i", t.quant_axis)])
        shape_vec = b.create_scalar_vector("i", 4, t.shape)
        name_off = b.create_string(t.name)
        fields = [
            (0, "offset", shape_vec),
            (1, "b", TENSOR_TYPE[t.dtype]),
            (2, "I", tensor_buffer_index[i]),
            (3, "offset", name_off),
        ]
        if quant:
            fields.append((4, "offset", quant))
        tensor_offsets.append(b.create_table(fields))

    op_offsets = []
    for op in ops:
        opt_type, opt_off = _options_table(b, op)
        ins = b.create_scalar_vector("i", 4, op.inputs)
        outs = b.create_scalar_vector("i", 4, op.outputs)
        fields = [(0, "I", opcode_index[op.opcode]), (1, "offset", ins), (2, "offset", outs)]
        if opt_off:
            fields.extend([(3, "B", opt_type), (4, "offset", opt_off)])
        op_offsets.append(b.create_table(fields))

    sg_fields = [
        (0, "offset", b.create_offset_vector(tensor_offsets)),
        (1, "offset", b.create_scalar_vector("i", 4, inputs)),
        (2, "offset", b.create_scalar_vector("i", 4, outputs)),
        (3, "offset", b.create_offset_vector(op_offsets)),
    ]
    subgraph = b.create_table(sg_fields)
    subgraphs = [subgraph]
    for _ in range(extra_subgraphs):
        subgraphs.append(b.create_table([
            (0, "offset", b.create_offset_vector([])),
            (3, "offset", b.create_offset_vector([])),
        ]))

    model_fields = [
        (0, "I", version),
        (1, "offset", b.create_offset_vector(opcode_offsets)),
        (2, "offset", b.create_offset_vector(subgraphs)),
        (4, "offset", b.create_offset_vector(buffer_offsets)),
    ]
    if description:
        model_fields.append((3, "offset", b.create_string(description)))
    model = b.create_table(model_fields)
    return b.finish(model, identifier)


def mobilenet_like(blocks: int = 31, classes: int = 4, seed: int = 7) -> bytes:
    """A MobileNetV1-shaped uint8 model with 3 + 2*blocks + 3 = 66 operators.

    Conv stem, `blocks` fused depthwise-separable blocks, average pool, 1x1
    logits conv and softmax. Channel widths shrink aggressively so the file
    stays small; names and the stem's output unit follow the original layout.
    """
    rng = np.random.default_rng(seed)
    tensors = [TensorSpec("input", (1, 224, 224, 3), "uint8", scales=(0.0078125,), zero_points=(128,))]
    ops = []

    def add_tensor(spec: TensorSpec) -> int:
        tensors.append(spec)
        return len(tensors) - 1

    def qweights(shape) -> TensorSpec:
        data = rng.integers(0, 256, size=shape, dtype=np.uint8)
        return TensorSpec("", shape, "uint8", data=data, scales=(0.02,), zero_points=(128,))

    def qbias(n) -> TensorSpec:
        data = rng.integers(-128, 128, size=(n,), dtype=np.int32)
        return TensorSpec("", (n,), "int32", data=data, scales=(0.00015625,), zero_points=(0,))

    def qact(name, shape) -> TensorSpec:
        return TensorSpec(name, shape, "uint8", scales=(0.0235,), zero_points=(0,))

    # stem: 3x3/2 conv, 224 -> 112, 32 channels (the classic first unit)
    w = add_tensor(qweights((32, 3, 3, 3)))
    bias = add_tensor(qbias(32))
    out = add_tensor(qact("MobilenetV1/Conv2d_0/Relu6", (1, 112, 112, 32)))
    ops.append(OpSpec("CONV_2D", [0, w, bias], [out],
                      {"padding": "SAME", "stride_w": 2, "stride_h": 2, "activation": "RELU6"}))

    spatial, channels = 112, 32
    prev = out
    for i in range(1, blocks + 1):
        stride = 2 if spatial > 7 else 1
        spatial = max(spatial // stride, 7)
        dw_name = f"MobilenetV1/Conv2d_{i}_depthwise/Relu6"
        pw_name = f"MobilenetV1/Conv2d_{i}_pointwise/Relu6"
        w = add_tensor(qweights((1, 3, 3, channels)))
        bias = add_tensor(qbias(channels))
        dw_out = add_tensor(qact(dw_name, (1, spatial, spatial, channels)))
        ops.append(OpSpec("DEPTHWISE_CONV_2D", [prev, w, bias], [dw_out],
                          {"padding": "SAME", "stride_w": stride, "stride_h": stride,
                           "depth_multiplier": 1, "activation": "RELU6"}))
        next_channels = min(channels * 2, 16) if i > 1 else 16
        w = add_tensor(qweights((next_channels, 1, 1, channels)))
        bias = add_tensor(qbias(next_channels))
        pw_out = add_tensor(qact(pw_name, (1, spatial, spatial, next_channels)))
        ops.append(OpSpec("CONV_2D", [dw_out, w, bias], [pw_out],
                          {"padding": "SAME", "stride_w": 1, "stride_h": 1, "activation": "RELU6"}))
        prev, channels = pw_out, next_channels

    pooled = add_tensor(qact("MobilenetV1/Logits/AvgPool_1a/AvgPool", (1, 1, 1, channels)))
    ops.append(OpSpec("AVERAGE_POOL_2D", [prev], [pooled],
                      {"padding": "VALID", "stride_w": 1, "stride_h": 1,
                       "filter_w": spatial, "filter_h": spatial}))
    w = add_tensor(qweights((classes, 1, 1, channels)))
    bias = add_tensor(qbias(classes))
    logits = add_tensor(qact("MobilenetV1/Logits/Conv2d_1c_1x1/BiasAdd", (1, 1, 1, classes)))
    ops.append(OpSpec("CONV_2D", [pooled, w, bias], [logits],
                      {"padding": "SAME", "stride_w": 1, "stride_h": 1}))
    probs = add_tensor(TensorSpec("MobilenetV1/Predictions/Softmax", (1, 1, 1, classes), "uint8",
                                  scales=(0.00390625,), zero_points=(0,)))
    ops.append(OpSpec("SOFTMAX", [logits], [probs], {"beta": 1.0}))

    return build_model(tensors, ops, [0], [probs])
