"""TFLite decoding: layer sequences, params, and malformed-input handling."""

from __future__ import annotations

import numpy as np
import pytest
from tflite_builder import OpSpec, TensorSpec, build_model, mobilenet_like

from modelprobe.errors import BadMagic, ModelFormatError, Truncated, UnsupportedVersion
from modelprobe.tflite.model import DType
from modelprobe.tflite.parser import extract_params, parse_model, to_layer_sequence


def tiny_fc_model(weights=None) -> bytes:
    w = np.arange(12, dtype=np.float32).reshape(3, 4) if weights is None else weights
    return build_model(
        tensors=[
            TensorSpec("x", (1, 4)),
            TensorSpec("fc/w", tuple(w.shape), data=w),
            TensorSpec("fc/b", (w.shape[0],), data=np.zeros(w.shape[0], dtype=np.float32)),
            TensorSpec("fc/out", (1, w.shape[0])),
            TensorSpec("probs", (1, w.shape[0])),
        ],
        ops=[
            OpSpec("FULLY_CONNECTED", [0, 1, 2], [3]),
            OpSpec("SOFTMAX", [3], [4], {"beta": 1.0}),
        ],
        inputs=[0],
        outputs=[4],
    )


class TestParseBasics:
    def test_mobilenet_like_has_66_layers(self):
        graph = parse_model(mobilenet_like(), name="mobilenet_v1_like")
        assert len(graph.layers) == 66
        assert len(graph.layers) == len(graph.ops)

    def test_first_unit_matches_known_conv_encoding(self):
        graph = parse_model(mobilenet_like())
        unit = graph.layers[0]
        assert unit.identifier == "MobilenetV1/Conv2d_0/Relu6"
        assert unit.shape == (1, 112, 112, 32)
        assert unit.dtype is DType.UINT8

    def test_bad_magic(self):
        data = bytearray(tiny_fc_model())
        data[4:8] = b"NOPE"
        with pytest.raises(BadMagic):
            parse_model(bytes(data))

    def test_empty_and_short_buffers(self):
        with pytest.raises(BadMagic):
            parse_model(b"")
        with pytest.raises(BadMagic):
            parse_model(b"\x00\x00\x00")

    def test_unsupported_version(self):
        data = build_model(
            tensors=[TensorSpec("x", (1, 2))],
            ops=[],
            inputs=[0],
            outputs=[0],
            version=7,
        )
        with pytest.raises(UnsupportedVersion):
            parse_model(data)

    def test_truncated_weight_buffer(self):
        data = tiny_fc_model()
        # weight payload sits in the file; removing the tail breaks its bounds
        with pytest.raises(Truncated):
            parse_model(data[:-24])

    def test_parse_is_deterministic(self):
        data = tiny_fc_model()
        g1, g2 = parse_model(data), parse_model(data)
        assert [u.strict_key() for u in g1.layers] == [u.strict_key() for u in g2.layers]
        assert g1.meta.digest == g2.meta.digest
        assert all(np.array_equal(p1.weights, p2.weights) for p1, p2 in zip(g1.params, g2.params))

    def test_zero_operator_model(self):
        data = build_model(tensors=[TensorSpec("x", (1, 2))], ops=[], inputs=[0], outputs=[0])
        graph = parse_model(data)
        assert to_layer_sequence(graph) == []
        assert extract_params(graph) == []

    def test_multi_subgraph_counted_but_only_primary_parsed(self):
        data = build_model(
            tensors=[TensorSpec("x", (1, 2))], ops=[], inputs=[0], outputs=[0], extra_subgraphs=2
        )
        graph = parse_model(data)
        assert graph.meta.subgraph_count == 3
        assert graph.layers == []

    def test_forward_reference_rejected(self):
        data = build_model(
            tensors=[
                TensorSpec("x", (1, 4)),
                TensorSpec("a", (1, 4)),
                TensorSpec("b", (1, 4)),
            ],
            ops=[
                OpSpec("RELU", [2], [1]),  # reads tensor 2 before it is produced
                OpSpec("RELU", [1], [2]),
            ],
            inputs=[0],
            outputs=[2],
        )
        with pytest.raises(ModelFormatError):
            parse_model(data)


class TestLayerSequence:
    def test_identifier_is_first_output_tensor_name(self):
        graph = parse_model(tiny_fc_model())
        assert [u.identifier for u in graph.layers] == ["fc/out", "probs"]
        assert [u.opcode for u in graph.layers] == ["FULLY_CONNECTED", "SOFTMAX"]

    def test_dense_kernel_params(self):
        w = np.arange(12, dtype=np.float32).reshape(3, 4)
        graph = parse_model(tiny_fc_model(w))
        params = extract_params(graph)
        assert len(params[0]) == 12  # 4x3 kernel -> 12 weights
        assert params[0].weight_shape == (3, 4)
        assert np.array_equal(params[0].weights, w.reshape(-1))

    def test_weightless_layer_has_empty_params(self):
        graph = parse_model(tiny_fc_model())
        assert len(graph.params[1]) == 0  # softmax owns no weights

    def test_layer_sequence_json_dump(self):
        from modelprobe.tflite.parser import layer_sequence_json

        dump = layer_sequence_json(parse_model(tiny_fc_model()))
        assert dump[0] == {"identifier": "fc/out", "shape": [1, 3],
                           "dtype": "float32", "opcode": "FULLY_CONNECTED"}
        import json

        json.dumps(dump)  # serializable as-is


class TestMalformedInputs:
    """Corrupted bytes must fail with domain errors, never crash the decoder."""

    def test_random_single_byte_corruptions(self, model_bytes):
        rng = np.random.default_rng(99)
        data = bytearray(model_bytes["base_alpha"])
        crashes = []
        for _ in range(300):
            corrupted = bytearray(data)
            pos = int(rng.integers(0, len(corrupted)))
            corrupted[pos] = int(rng.integers(0, 256))
            try:
                parse_model(bytes(corrupted))
            except ModelFormatError:
                pass  # rejected cleanly
            except Exception as exc:  # noqa: BLE001 - the point of the test
                crashes.append((pos, type(exc).__name__))
        assert crashes == []

    def test_every_truncation_length_step(self, model_bytes):
        data = model_bytes["base_beta"]
        for cut in range(0, len(data), 97):
            try:
                parse_model(data[:cut])
            except ModelFormatError:
                pass
            # anything else propagates and fails the test

    def test_all_0xff_payload(self):
        with pytest.raises(ModelFormatError):
            parse_model(b"\xff" * 256)
        data = bytearray(b"\xff" * 256)
        data[4:8] = b"TFL3"
        with pytest.raises(ModelFormatError):
            parse_model(bytes(data))


class TestManifestAgreement:
    """The generator manifest (TFLite's own decoder) is the parsing oracle."""

    def test_layer_listing_matches_manifest_exactly(self, graphs, manifest):
        for name, entry in manifest["models"].items():
            got = [
                {"identifier": u.identifier, "shape": list(u.shape), "dtype": u.dtype.value, "opcode": u.opcode}
                for u in graphs[name].layers
            ]
            assert got == entry["layers"], f"layer listing mismatch for {name}"

    def test_layer_count_equals_operator_count(self, graphs):
        for name, graph in graphs.items():
            assert len(graph.layers) == len(graph.ops), name

    def test_quantized_weights_carry_scale_and_zero_point(self, graphs):
        quant = graphs["quant_alpha"]
        weighted = [p for p in quant.params if len(p) > 0]
        assert weighted, "quantized model should own weight tensors"
        for p in weighted:
            assert p.dtype in (DType.INT8, DType.UINT8, DType.INT32)
            assert p.scale is not None and p.zero_point is not None

    def test_float_weights_carry_no_quantization(self, graphs):
        for p in graphs["base_alpha"].params:
            if len(p) > 0:
                assert p.dtype is DType.FLOAT32
                assert p.scale is None and p.zero_point is None

    def test_input_spec_matches_manifest(self, graphs, manifest):
        for name, entry in manifest["models"].items():
            t = graphs[name].tensors[graphs[name].inputs[0]]
            assert list(t.shape) == entry["input"]["shape"], name
            assert t.dtype.value == entry["input"]["dtype"], name
