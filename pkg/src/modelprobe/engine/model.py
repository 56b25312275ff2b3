"""Executable float surrogate of a parsed model with input gradients.

Quantized weights are dequantized at compile time; quantized activations at
the graph boundary are simulated with round-trip quantization so success
counting sees the same rounding the deployed model applies. Reverse-mode
differentiation covers gradients with respect to the input only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch, UnsupportedOp
from ..tflite.model import DType, ModelGraph, QuantParams, TensorInfo
from . import ops as K

SUPPORTED_OPS = {
    "CONV_2D", "DEPTHWISE_CONV_2D", "FULLY_CONNECTED", "RELU", "RELU6",
    "AVERAGE_POOL_2D", "MAX_POOL_2D", "SOFTMAX", "RESHAPE", "ADD", "QUANTIZE",
}

_QRANGE = {DType.UINT8: (0, 255), DType.INT8: (-128, 127), DType.INT32: (-(2**31), 2**31 - 1)}


def dequantize(q: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    """real value = scale * (q - zero_point), elementwise."""
    return ((np.asarray(q).astype(np.float32)) - zero_point) * scale


def dequantize_tensor(t: TensorInfo) -> np.ndarray:
    """Dequantize a constant tensor, honoring per-channel scales."""
    data = t.data.reshape(t.shape) if len(t.shape) else t.data
    if t.quant is None or t.dtype == DType.FLOAT32:
        return data.astype(np.float32)
    q = t.quant
    if not q.per_channel:
        return dequantize(data, q.scale, q.zero_point)
    bshape = [1] * max(data.ndim, 1)
    bshape[q.axis] = len(q.scales)
    scales = np.asarray(q.scales, dtype=np.float32).reshape(bshape)
    zps = np.asarray(q.zero_points, dtype=np.float32).reshape(bshape)
    return (data.astype(np.float32) - zps) * scales


@dataclass
class InputSpec:
    shape: tuple[int, ...]
    dtype: DType
    quant: QuantParams | None


@dataclass
class CompiledOp:
    kind: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass
class LabeledExample:
    x: np.ndarray  # float input in real-value space ([0,1] for image models)
    y_true: int


class EngineModel:
    def __init__(self, name: str, compiled: list[CompiledOp], input_index: int,
                 output_index: int, logits_index: int, input_spec: InputSpec, class_count: int):
        self.name = name
        self._ops = compiled
        self._input_index = input_index
        self._output_index = output_index
        self._logits_index = logits_index
        self.input_spec = input_spec
        self.class_count = class_count

    # -- construction --------------------------------------------------------

    @classmethod
    def from_graph(cls, graph: ModelGraph, name: str | None = None) -> "EngineModel":
        if len(graph.inputs) != 1 or len(graph.outputs) != 1:
            raise UnsupportedOp(
                f"engine requires a single input and output, got {len(graph.inputs)}/{len(graph.outputs)}"
            )
        compiled = [_compile_op(graph, op) for op in graph.ops]

        input_t = graph.tensors[graph.inputs[0]]
        output_index = graph.outputs[0]

        producer = {c.output: c for c in compiled}
        logits_index = output_index
        while logits_index in producer and producer[logits_index].kind in ("QUANTIZE", "SOFTMAX"):
            logits_index = producer[logits_index].inputs[0]

        out_shape = graph.tensors[output_index].shape
        class_count = int(out_shape[-1]) if out_shape else 0
        spec = InputSpec(shape=tuple(input_t.shape), dtype=input_t.dtype, quant=input_t.quant)
        return cls(
            name=name or graph.meta.name or graph.meta.digest[:12],
            compiled=compiled,
            input_index=graph.inputs[0],
            output_index=output_index,
            logits_index=logits_index,
            input_spec=spec,
            class_count=class_count,
        )

    # -- execution -----------------------------------------------------------

    def _ingest(self, x: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray | None]:
        x = np.asarray(x)
        if tuple(x.shape) != self.input_spec.shape:
            raise ShapeMismatch(f"input shape {tuple(x.shape)} != spec {self.input_spec.shape}")
        x = x.astype(dtype)
        if self.input_spec.dtype in (DType.UINT8, DType.INT8) and self.input_spec.quant is not None:
            q = self.input_spec.quant
            qmin, qmax = _QRANGE[self.input_spec.dtype]
            y, in_range = K.quantize_roundtrip(x, q.scale, q.zero_point, qmin, qmax)
            return y, in_range
        return x, None

    def _run(self, x: np.ndarray, dtype=np.float32, record: bool = False):
        x0, input_mask = self._ingest(x, dtype)
        acts: dict[int, np.ndarray] = {self._input_index: x0}
        tape = [] if record else None
        for cop in self._ops:
            out, ctx = _forward_op(cop, acts, dtype)
            acts[cop.output] = out
            if record:
                tape.append(ctx)
        return acts, tape, input_mask

    def forward(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Final graph output (probabilities if the model ends in softmax), [1, C]."""
        acts, _, _ = self._run(x, dtype)
        out = acts[self._output_index]
        return out.reshape(out.shape[0], -1)

    def logits(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Pre-softmax classification scores, [1, C]."""
        acts, _, _ = self._run(x, dtype)
        out = acts[self._logits_index]
        return out.reshape(out.shape[0], -1)

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward(x)[0]))

    def logits_vjp(self, x: np.ndarray, grad_logits: np.ndarray, dtype=np.float32) -> np.ndarray:
        """Gradient of <grad_logits, logits(x)> with respect to x."""
        acts, tape, input_mask = self._run(x, dtype, record=True)
        grads: dict[int, np.ndarray] = {
            self._logits_index: np.asarray(grad_logits, dtype=dtype).reshape(acts[self._logits_index].shape)
        }
        for cop, ctx in zip(reversed(self._ops), reversed(tape)):
            gy = grads.pop(cop.output, None)
            if gy is None:
                continue
            for idx, g in _backward_op(cop, ctx, gy):
                if g is None:
                    continue
                if idx in grads:
                    grads[idx] = grads[idx] + g
                else:
                    grads[idx] = g
        gx = grads.get(self._input_index)
        if gx is None:
            gx = np.zeros(self.input_spec.shape, dtype=dtype)
        if input_mask is not None:
            gx = gx * input_mask.astype(dtype)  # straight-through input quantization
        return gx

    def loss_and_input_grad(self, example: LabeledExample, dtype=np.float32) -> tuple[float, np.ndarray]:
        """Cross-entropy of softmax(logits) against y_true and its input gradient."""
        if not 0 <= example.y_true < self.class_count:
            raise ShapeMismatch(f"label {example.y_true} out of range for {self.class_count} classes")
        z = self.logits(example.x, dtype)[0]
        zs = z - z.max()
        log_probs = zs - np.log(np.exp(zs).sum())
        loss = float(-log_probs[example.y_true])
        p = np.exp(log_probs)
        gl = p.copy()
        gl[example.y_true] -= 1.0
        grad = self.logits_vjp(example.x, gl[None, :], dtype)
        return loss, grad

    def prob_grad(self, x: np.ndarray, class_index: int, dtype=np.float32) -> tuple[float, np.ndarray]:
        """Softmax probability of one class and its input gradient."""
        z = self.logits(x, dtype)[0]
        zs = z - z.max()
        p = np.exp(zs) / np.exp(zs).sum()
        gl = -p[class_index] * p
        gl[class_index] += p[class_index]
        return float(p[class_index]), self.logits_vjp(x, gl[None, :], dtype)

    def class_score_grad(self, x: np.ndarray, k: int, y: int, dtype=np.float32) -> tuple[float, np.ndarray]:
        """logit_k - logit_y and its input gradient (DeepFool linearization)."""
        z = self.logits(x, dtype)[0]
        gl = np.zeros((1, self.class_count), dtype=dtype)
        gl[0, k] = 1.0
        gl[0, y] = -1.0
        return float(z[k] - z[y]), self.logits_vjp(x, gl, dtype)


# -- op compilation / dispatch ------------------------------------------------


def _constant(graph: ModelGraph, index: int) -> np.ndarray | None:
    if index == -1 or index >= len(graph.tensors):
        return None
    t = graph.tensors[index]
    if t.data is None:
        return None
    return dequantize_tensor(t)


def _compile_op(graph: ModelGraph, op) -> CompiledOp:
    if op.opcode not in SUPPORTED_OPS:
        raise UnsupportedOp(f"operator {op.opcode} is outside the executable subset")
    if not op.outputs:
        raise UnsupportedOp(f"operator {op.opcode} without outputs")
    attrs = dict(op.options)
    weights = bias = None

    if op.opcode in ("CONV_2D", "DEPTHWISE_CONV_2D", "FULLY_CONNECTED"):
        weights = _constant(graph, op.inputs[1]) if len(op.inputs) > 1 else None
        if weights is None:
            raise UnsupportedOp(f"{op.opcode} without constant weights")
        bias = _constant(graph, op.inputs[2]) if len(op.inputs) > 2 else None
        if bias is None:
            bias = np.zeros(weights.shape[0] if op.opcode != "DEPTHWISE_CONV_2D" else weights.shape[-1],
                            dtype=np.float32)
        if op.opcode != "FULLY_CONNECTED":
            if attrs.get("stride_w", 0) <= 0 or attrs.get("stride_h", 0) <= 0:
                raise UnsupportedOp(f"{op.opcode} without valid strides")
            if attrs.get("dilation_w", 1) != 1 or attrs.get("dilation_h", 1) != 1:
                raise UnsupportedOp(f"{op.opcode} with dilation is not executable")
    elif op.opcode in ("AVERAGE_POOL_2D", "MAX_POOL_2D"):
        if attrs.get("stride_w", 0) <= 0 or attrs.get("filter_w", 0) <= 0:
            raise UnsupportedOp(f"{op.opcode} without valid pool geometry")
    elif op.opcode == "RESHAPE":
        out_shape = graph.tensors[op.outputs[0]].shape
        if any(d < 0 for d in out_shape):
            raise UnsupportedOp("RESHAPE with dynamic output shape")
        attrs["target_shape"] = out_shape
    elif op.opcode == "QUANTIZE":
        out_t = graph.tensors[op.outputs[0]]
        if out_t.quant is None or out_t.dtype not in _QRANGE:
            raise UnsupportedOp("QUANTIZE without output quantization")
        attrs["scale"] = out_t.quant.scale
        attrs["zero_point"] = out_t.quant.zero_point
        attrs["qrange"] = _QRANGE[out_t.dtype]

    data_inputs = tuple(i for i in op.inputs if i != -1 and not graph.tensors[i].is_constant)
    if not data_inputs:
        raise UnsupportedOp(f"{op.opcode} has no activation inputs")
    if op.opcode == "ADD" and len(data_inputs) != 2:
        raise UnsupportedOp("ADD with a constant operand is not executable")
    return CompiledOp(
        kind=op.opcode,
        inputs=data_inputs,
        output=op.outputs[0],
        attrs=attrs,
        weights=weights,
        bias=bias,
    )


def _forward_op(cop: CompiledOp, acts: dict[int, np.ndarray], dtype):
    a = cop.attrs
    x = acts[cop.inputs[0]]
    if cop.kind == "CONV_2D":
        return K.conv2d(x, cop.weights.astype(dtype), cop.bias.astype(dtype),
                        (a["stride_h"], a["stride_w"]), a["padding"], a.get("activation", "NONE"))
    if cop.kind == "DEPTHWISE_CONV_2D":
        return K.depthwise_conv2d(x, cop.weights.astype(dtype), cop.bias.astype(dtype),
                                  (a["stride_h"], a["stride_w"]), a["padding"],
                                  a.get("depth_multiplier", 1) or 1, a.get("activation", "NONE"))
    if cop.kind == "FULLY_CONNECTED":
        return K.fully_connected(x, cop.weights.astype(dtype), cop.bias.astype(dtype),
                                 a.get("activation", "NONE"))
    if cop.kind == "AVERAGE_POOL_2D":
        return K.avg_pool(x, (a["filter_h"], a["filter_w"]), (a["stride_h"], a["stride_w"]),
                          a["padding"], a.get("activation", "NONE"))
    if cop.kind == "MAX_POOL_2D":
        return K.max_pool(x, (a["filter_h"], a["filter_w"]), (a["stride_h"], a["stride_w"]),
                          a["padding"], a.get("activation", "NONE"))
    if cop.kind == "RELU":
        return np.maximum(x, 0), (x,)
    if cop.kind == "RELU6":
        return np.clip(x, 0, 6), (x,)
    if cop.kind == "SOFTMAX":
        return K.softmax(x, a.get("beta", 1.0) or 1.0)
    if cop.kind == "RESHAPE":
        return K.reshape(x, a["target_shape"])
    if cop.kind == "ADD":
        x2 = acts[cop.inputs[1]]
        return K.add(x, x2, a.get("activation", "NONE"))
    if cop.kind == "QUANTIZE":
        qmin, qmax = a["qrange"]
        return K.quantize_roundtrip(x, a["scale"], a["zero_point"], qmin, qmax)
    raise UnsupportedOp(cop.kind)


def _backward_op(cop: CompiledOp, ctx, gy) -> list[tuple[int, np.ndarray]]:
    a = cop.attrs
    act = a.get("activation", "NONE")
    if cop.kind == "CONV_2D":
        return [(cop.inputs[0], K.conv2d_backward(ctx, gy, act))]
    if cop.kind == "DEPTHWISE_CONV_2D":
        return [(cop.inputs[0], K.depthwise_conv2d_backward(ctx, gy, act))]
    if cop.kind == "FULLY_CONNECTED":
        return [(cop.inputs[0], K.fully_connected_backward(ctx, gy, act))]
    if cop.kind == "AVERAGE_POOL_2D":
        return [(cop.inputs[0], K.avg_pool_backward(ctx, gy, act))]
    if cop.kind == "MAX_POOL_2D":
        return [(cop.inputs[0], K.max_pool_backward(ctx, gy, act))]
    if cop.kind == "RELU":
        (x,) = ctx
        return [(cop.inputs[0], gy * (x > 0).astype(gy.dtype))]
    if cop.kind == "RELU6":
        (x,) = ctx
        return [(cop.inputs[0], gy * ((x > 0) & (x < 6)).astype(gy.dtype))]
    if cop.kind == "SOFTMAX":
        return [(cop.inputs[0], K.softmax_backward(ctx, gy))]
    if cop.kind == "RESHAPE":
        return [(cop.inputs[0], K.reshape_backward(ctx, gy))]
    if cop.kind == "ADD":
        g1, g2 = K.add_backward(ctx, gy, act)
        return [(cop.inputs[0], g1), (cop.inputs[1], g2)]
    if cop.kind == "QUANTIZE":
        return [(cop.inputs[0], K.quantize_backward(ctx, gy))]
    raise UnsupportedOp(cop.kind)
