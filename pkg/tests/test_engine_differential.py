"""Differential checks of engine kernels against the TFLite runtime.

Runs only where TensorFlow is installed (it is the reference runtime, not a
package dependency); geometry cases here go beyond what the committed corpus
exercises, especially asymmetric SAME padding on odd extents.
"""

from __future__ import annotations

import numpy as np
import pytest
from tflite_builder import OpSpec, TensorSpec, build_model, mobilenet_like

from modelprobe.engine.model import EngineModel
from modelprobe.tflite.parser import parse_model

tf = pytest.importorskip("tensorflow", reason="TFLite reference runtime unavailable")

RNG = np.random.default_rng(1234)


def run_tflite(data: bytes, x: np.ndarray) -> np.ndarray:
    interp = tf.lite.Interpreter(
        model_content=data,
        num_threads=1,
        experimental_op_resolver_type=tf.lite.experimental.OpResolverType.BUILTIN_WITHOUT_DEFAULT_DELEGATES,
    )
    interp.allocate_tensors()
    interp.set_tensor(interp.get_input_details()[0]["index"], x)
    interp.invoke()
    return interp.get_tensor(interp.get_output_details()[0]["index"])


def one_op_model(op: str, in_shape, out_shape, options, weights=None, bias=None) -> bytes:
    tensors = [TensorSpec("x", tuple(in_shape))]
    inputs = [0]
    if weights is not None:
        tensors.append(TensorSpec("w", tuple(weights.shape), data=weights))
        tensors.append(TensorSpec("b", tuple(bias.shape), data=bias))
        inputs = [0, 1, 2]
    tensors.append(TensorSpec("y", tuple(out_shape)))
    return build_model(
        tensors=tensors,
        ops=[OpSpec(op, inputs, [len(tensors) - 1], options)],
        inputs=[0],
        outputs=[len(tensors) - 1],
    )


def out_hw(h, w, kh, kw, sh, sw, padding):
    if padding == "SAME":
        return -(-h // sh), -(-w // sw)
    return (h - kh) // sh + 1, (w - kw) // sw + 1


CONV_CASES = [
    # (in_shape, out_c, k, stride, padding, activation)
    ((1, 7, 9, 3), 5, 3, 1, "SAME", "NONE"),
    ((1, 7, 9, 3), 4, 3, 2, "SAME", "RELU"),
    ((1, 8, 8, 2), 6, 2, 2, "VALID", "RELU6"),
    ((1, 5, 5, 4), 3, 5, 1, "VALID", "NONE"),
    ((1, 9, 6, 1), 2, 4, 3, "SAME", "NONE"),
]


@pytest.mark.parametrize("in_shape,out_c,k,stride,padding,act", CONV_CASES)
def test_conv2d_matches_tflite(in_shape, out_c, k, stride, padding, act):
    w = RNG.normal(0, 0.5, size=(out_c, k, k, in_shape[3])).astype(np.float32)
    b = RNG.normal(0, 0.2, size=(out_c,)).astype(np.float32)
    oh, ow = out_hw(in_shape[1], in_shape[2], k, k, stride, stride, padding)
    data = one_op_model(
        "CONV_2D", in_shape, (1, oh, ow, out_c),
        {"padding": padding, "stride_w": stride, "stride_h": stride, "activation": act},
        weights=w, bias=b,
    )
    x = RNG.uniform(-1, 1, size=in_shape).astype(np.float32)
    ref = run_tflite(data, x)
    got = EngineModel.from_graph(parse_model(data)).forward(x)
    assert np.abs(ref.reshape(got.shape) - got).max() < 1e-5


DW_CASES = [
    ((1, 7, 9, 3), 1, 3, 1, "SAME"),
    ((1, 7, 7, 2), 2, 3, 2, "SAME"),
    ((1, 6, 8, 4), 1, 2, 2, "VALID"),
]


@pytest.mark.parametrize("in_shape,mult,k,stride,padding", DW_CASES)
def test_depthwise_matches_tflite(in_shape, mult, k, stride, padding):
    c = in_shape[3]
    w = RNG.normal(0, 0.5, size=(1, k, k, c * mult)).astype(np.float32)
    b = RNG.normal(0, 0.2, size=(c * mult,)).astype(np.float32)
    oh, ow = out_hw(in_shape[1], in_shape[2], k, k, stride, stride, padding)
    data = one_op_model(
        "DEPTHWISE_CONV_2D", in_shape, (1, oh, ow, c * mult),
        {"padding": padding, "stride_w": stride, "stride_h": stride,
         "depth_multiplier": mult, "activation": "NONE"},
        weights=w, bias=b,
    )
    x = RNG.uniform(-1, 1, size=in_shape).astype(np.float32)
    ref = run_tflite(data, x)
    got = EngineModel.from_graph(parse_model(data)).forward(x)
    assert np.abs(ref.reshape(got.shape) - got).max() < 1e-5


POOL_CASES = [
    ("AVERAGE_POOL_2D", (1, 7, 9, 3), 2, 2, "SAME"),
    ("AVERAGE_POOL_2D", (1, 5, 7, 2), 3, 2, "SAME"),
    ("AVERAGE_POOL_2D", (1, 6, 6, 2), 3, 3, "VALID"),
    ("MAX_POOL_2D", (1, 7, 9, 3), 2, 2, "SAME"),
    ("MAX_POOL_2D", (1, 5, 5, 4), 3, 1, "SAME"),
    ("MAX_POOL_2D", (1, 8, 6, 2), 2, 2, "VALID"),
]


@pytest.mark.parametrize("op,in_shape,k,stride,padding", POOL_CASES)
def test_pools_match_tflite(op, in_shape, k, stride, padding):
    oh, ow = out_hw(in_shape[1], in_shape[2], k, k, stride, stride, padding)
    data = one_op_model(
        op, in_shape, (1, oh, ow, in_shape[3]),
        {"padding": padding, "stride_w": stride, "stride_h": stride,
         "filter_w": k, "filter_h": k},
    )
    x = RNG.uniform(-1, 1, size=in_shape).astype(np.float32)
    ref = run_tflite(data, x)
    got = EngineModel.from_graph(parse_model(data)).forward(x)
    assert np.abs(ref.reshape(got.shape) - got).max() < 1e-5


def test_softmax_beta_matches_tflite():
    data = one_op_model("SOFTMAX", (1, 7), (1, 7), {"beta": 2.0})
    x = RNG.uniform(-2, 2, size=(1, 7)).astype(np.float32)
    ref = run_tflite(data, x)
    got = EngineModel.from_graph(parse_model(data)).forward(x)
    assert np.abs(ref - got).max() < 1e-6


def test_fully_connected_with_relu_matches_tflite():
    w = RNG.normal(0, 0.5, size=(5, 12)).astype(np.float32)
    b = RNG.normal(0, 0.2, size=(5,)).astype(np.float32)
    data = one_op_model("FULLY_CONNECTED", (1, 12), (1, 5), {"activation": "RELU"},
                        weights=w, bias=b)
    x = RNG.uniform(-1, 1, size=(1, 12)).astype(np.float32)
    ref = run_tflite(data, x)
    got = EngineModel.from_graph(parse_model(data)).forward(x)
    assert np.abs(ref - got).max() < 1e-6


def test_hand_built_mobilenet_like_is_executable():
    graph = parse_model(mobilenet_like())
    engine = EngineModel.from_graph(graph)
    rng = np.random.default_rng(0)
    q = rng.integers(0, 256, size=(1, 224, 224, 3))
    quant = engine.input_spec.quant
    x = (q.astype(np.float32) - quant.zero_point) * quant.scale
    out = engine.forward(x)
    assert out.shape == (1, 4)
    assert np.all(np.isfinite(out))
