"""Keras model constructions and TFLite conversion helpers.

Every builder takes a numpy Generator and assigns all weights from it, so the
emitted graphs are functions of the corpus seed alone. Conversion pins batch
size 1 (keeps Flatten a single RESHAPE) and tensor names are canonicalized
after conversion because the MLIR converter's fused names are noisy.
"""

from __future__ import annotations

import hashlib

import numpy as np
import tensorflow as tf
from tensorflow.lite.tools import flatbuffer_utils

INPUT_SHAPE = (16, 16, 3)
CLASSES = 3


def stable_seed(*parts) -> int:
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def _wkey(w) -> str:
    return getattr(w, "path", None) or w.name


def seed_weights(model: tf.keras.Model, rng: np.random.Generator, scale: float = 0.45) -> None:
    for w in model.weights:
        w.assign(rng.uniform(-scale, scale, size=w.shape).astype(np.float32))


def near_identity_dense(layer: tf.keras.layers.Dense, rng: np.random.Generator, noise: float) -> None:
    n_in, n_out = layer.kernel.shape
    kernel = np.eye(n_in, n_out, dtype=np.float32) + rng.normal(0, noise, size=(n_in, n_out)).astype(np.float32)
    bias = rng.normal(0, noise / 4, size=(n_out,)).astype(np.float32)
    layer.set_weights([kernel, bias])


# -- base architectures (kept structurally distinct on purpose) ----------------


def base_alpha_layers(inp):
    # 10 operators: retraining the top dense leaves an 8/10 parameter run,
    # keeping a fine-tune of this base inside the relation-graph threshold
    x = tf.keras.layers.Conv2D(8, 3, padding="same", activation="relu", name="a_conv1")(inp)
    x = tf.keras.layers.Conv2D(8, 3, padding="same", activation="relu", name="a_conv2")(x)
    x = tf.keras.layers.MaxPooling2D(2, name="a_pool1")(x)
    x = tf.keras.layers.Conv2D(12, 3, padding="same", activation="relu", name="a_conv3")(x)
    x = tf.keras.layers.Conv2D(12, 3, padding="same", activation="relu", name="a_conv4")(x)
    x = tf.keras.layers.AveragePooling2D(2, name="a_pool2")(x)
    x = tf.keras.layers.Conv2D(16, 3, padding="valid", activation="relu", name="a_conv5")(x)
    x = tf.keras.layers.Flatten(name="a_flat")(x)
    x = tf.keras.layers.Dense(CLASSES, name="a_logits")(x)
    return tf.keras.layers.Softmax(name="a_probs")(x)


def base_beta_layers(inp):
    x = tf.keras.layers.DepthwiseConv2D(3, padding="same", name="b_dw")(inp)
    x = tf.keras.layers.Conv2D(10, 1, activation="relu", name="b_pw")(x)
    x = tf.keras.layers.AveragePooling2D(2, name="b_pool")(x)
    x = tf.keras.layers.Conv2D(10, 3, padding="same", activation="relu", name="b_conv")(x)
    x = tf.keras.layers.Flatten(name="b_flat")(x)
    x = tf.keras.layers.Dense(CLASSES, name="b_logits")(x)
    return tf.keras.layers.Softmax(name="b_probs")(x)


def base_gamma_layers(inp):
    trunk = tf.keras.layers.Conv2D(8, 3, padding="same", activation="relu", name="g_conv1")(inp)
    branch = tf.keras.layers.Conv2D(8, 3, padding="same", name="g_conv2")(trunk)
    x = tf.keras.layers.Add(name="g_res")([trunk, branch])
    x = tf.keras.layers.ReLU(max_value=6.0, name="g_relu6")(x)
    x = tf.keras.layers.MaxPooling2D(4, name="g_pool")(x)
    x = tf.keras.layers.Flatten(name="g_flat")(x)
    x = tf.keras.layers.Dense(CLASSES, name="g_logits")(x)
    return tf.keras.layers.Softmax(name="g_probs")(x)


BASE_BUILDERS = {
    "base_alpha": base_alpha_layers,
    "base_beta": base_beta_layers,
    "base_gamma": base_gamma_layers,
}


def build_base(name: str, seed: int) -> tf.keras.Model:
    tf.keras.backend.clear_session()
    inp = tf.keras.Input(shape=INPUT_SHAPE, batch_size=1, name=f"{name}_input")
    model = tf.keras.Model(inp, BASE_BUILDERS[name](inp), name=name)
    seed_weights(model, np.random.default_rng(stable_seed(seed, name)))
    _calibrate_classes(model, np.random.default_rng(stable_seed(seed, name, "calibration")))
    return model


def _calibrate_classes(model: tf.keras.Model, rng: np.random.Generator, samples: int = 256) -> None:
    """Shift the logits bias until random inputs spread over all classes.

    A random-weight CNN collapses onto one class over the whole input domain;
    a trained classifier does not. Each class's argmax share is monotone in
    its bias, so a damped fixed-point iteration on the cached raw logits
    balances the prior and keeps decision boundaries inside the input region.
    """
    logits_layer = next(l for l in reversed(model.layers) if isinstance(l, tf.keras.layers.Dense))
    probe = tf.keras.Model(model.input, logits_layer.output)
    xs = rng.uniform(0, 1, size=(samples, *INPUT_SHAPE)).astype(np.float32)
    raw = np.concatenate([probe(xs[i : i + 1]).numpy() for i in range(samples)])
    classes = raw.shape[1]
    step = float(raw.std(axis=0).mean()) or 1.0
    shift = -raw.mean(axis=0)
    for _ in range(200):
        share = np.bincount((raw + shift).argmax(axis=1), minlength=classes) / samples
        if share.max() - share.min() < 2.0 / samples:
            break
        shift += 0.5 * step * (1.0 / classes - share)
    kernel, bias = logits_layer.get_weights()
    logits_layer.set_weights([kernel, bias + shift.astype(np.float32)])


def build_derived(name: str, base_name: str, method: str, seed: int, head_noise: float) -> tf.keras.Model:
    """Rebuild the base graph (same layer names) and graft the derived change."""
    base_model = build_base(base_name, seed)
    base_weights = {_wkey(w): w.numpy() for w in base_model.weights}

    tf.keras.backend.clear_session()
    inp = tf.keras.Input(shape=INPUT_SHAPE, batch_size=1, name=f"{base_name}_input")
    base_out = BASE_BUILDERS[base_name](inp)
    rng = np.random.default_rng(stable_seed(seed, name))

    if method == "feature-extraction":
        # feature extraction: freeze the whole base, train only the new head
        x = tf.keras.layers.Dense(CLASSES, name=f"{name}_head")(base_out)
        out = tf.keras.layers.Softmax(name=f"{name}_head_probs")(x)
    elif method == "extra-layer":
        out = tf.keras.layers.Dense(CLASSES, name=f"{name}_extra")(base_out)
    elif method == "fine-tune":
        out = base_out
    else:
        raise ValueError(f"unknown derivation method {method}")

    model = tf.keras.Model(inp, out, name=name)
    # start from the base's exact weights (match on layer-scoped variable paths)
    for w in model.weights:
        key = _wkey(w)
        if key in base_weights:
            w.assign(base_weights[key])
    if method == "feature-extraction":
        near_identity_dense(model.get_layer(f"{name}_head"), rng, head_noise)
    elif method == "extra-layer":
        near_identity_dense(model.get_layer(f"{name}_extra"), rng, head_noise)
    elif method == "fine-tune":
        # retrain the top dense layer only: perturb it away from the base
        dense = next(l for l in reversed(model.layers) if isinstance(l, tf.keras.layers.Dense))
        kernel, bias = dense.get_weights()
        dense.set_weights([
            kernel + rng.normal(0, head_noise, size=kernel.shape).astype(np.float32),
            bias + rng.normal(0, head_noise / 3, size=bias.shape).astype(np.float32),
        ])
    return model


# -- conversion ----------------------------------------------------------------


def convert_float(model: tf.keras.Model) -> bytes:
    conv = tf.lite.TFLiteConverter.from_keras_model(model)
    conv.exclude_conversion_metadata = True
    return conv.convert()


def convert_quantized_uint8(model: tf.keras.Model, calib_seed: int, samples: int = 32) -> bytes:
    conv = tf.lite.TFLiteConverter.from_keras_model(model)
    conv.exclude_conversion_metadata = True
    rng = np.random.default_rng(calib_seed)

    def representative():
        for _ in range(samples):
            yield [rng.uniform(0, 1, size=(1, *INPUT_SHAPE)).astype(np.float32)]

    conv.optimizations = [tf.lite.Optimize.DEFAULT]
    conv.representative_dataset = representative
    conv.target_spec.supported_ops = [tf.lite.OpsSet.TFLITE_BUILTINS_INT8]
    conv.inference_input_type = tf.uint8
    conv.inference_output_type = tf.uint8
    return conv.convert()


def rename_tensors(model_bytes: bytes, owner: str, shared_prefix_ops: int = 0, prefix_owner: str = "") -> bytes:
    """Canonical tensor names: op i's outputs become ``{owner}/op{i:02d}``.

    The first `shared_prefix_ops` operators are named under `prefix_owner`
    instead, so a derived model's unchanged prefix carries the exact name
    strings of its base and strict identifier matching sees the lineage.
    """
    mdl = flatbuffer_utils.convert_bytearray_to_object(bytearray(model_bytes))
    sg = mdl.subgraphs[0]
    renamed = set()
    for i, op in enumerate(sg.operators):
        name_owner = prefix_owner if (i < shared_prefix_ops and prefix_owner) else owner
        outs = [t for t in (op.outputs if op.outputs is not None else []) if t >= 0]
        for k, ti in enumerate(outs):
            suffix = f"/out{k}" if k else ""
            sg.tensors[ti].name = f"{name_owner}/op{i:02d}{suffix}".encode()
            renamed.add(ti)
        ins = [t for t in (op.inputs if op.inputs is not None else []) if t >= 0]
        for k, ti in enumerate(ins):
            if ti in renamed:
                continue
            buf = mdl.buffers[sg.tensors[ti].buffer]
            is_const = buf.data is not None and len(buf.data) > 0
            if is_const:
                sg.tensors[ti].name = f"{name_owner}/op{i:02d}/c{k}".encode()
                renamed.add(ti)
    input_owner = prefix_owner if (shared_prefix_ops > 0 and prefix_owner) else owner
    for ti in sg.inputs:
        if ti >= 0 and ti not in renamed:
            sg.tensors[ti].name = f"{input_owner}/input".encode()
            renamed.add(ti)
    if mdl.signatureDefs:
        mdl.signatureDefs = []  # name maps would dangle after renaming
    return bytes(flatbuffer_utils.convert_object_to_bytearray(mdl))
