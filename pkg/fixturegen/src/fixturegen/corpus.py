"""Corpus assembly: bases, derived variants, examples, references, manifest.

The whole corpus is a deterministic function of one seed. Layer listings and
reference outputs are produced with the TFLite interpreter itself, so the
manifest is an independent oracle for any other decoder or executor.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import tensorflow as tf

from .builders import (
    CLASSES,
    INPUT_SHAPE,
    build_base,
    build_derived,
    convert_float,
    convert_quantized_uint8,
    rename_tensors,
    stable_seed,
)
from .tensorio import write_tensor

REFERENCE_INPUTS = 4
AGREEMENT_INPUTS = 100
EXAMPLES_PER_TARGET = 10
EXAMPLE_CANDIDATES = 600

BASES = ("base_alpha", "base_beta", "base_gamma")
# head_noise and the example margin band together form a vulnerability ladder
# aligned with structural similarity: the less a derivation touches, the
# closer its behavior stays to the base and the better ancestor-crafted
# attacks transfer (the relationship the correlation criterion probes)
DERIVED = (
    # (name, base, method, head_noise, margin band for example selection)
    ("fe_alpha1", "base_alpha", "feature-extraction", 0.30, (0.15, 0.45)),
    ("fe_beta1", "base_beta", "feature-extraction", 0.45, (0.40, 0.70)),
    ("ft_alpha1", "base_alpha", "fine-tune", 0.04, (0.03, 0.25)),
    ("xl_alpha1", "base_alpha", "extra-layer", 0.15, (0.06, 0.32)),
)
MARGIN_BANDS = {name: band for name, _, _, _, band in DERIVED}
TARGETS = tuple(name for name, *_ in DERIVED)
QUANT_BASE = "base_alpha"
QUANT_NAME = "quant_alpha"

_NP_DTYPE_NAMES = {"float32": "float32", "uint8": "uint8", "int8": "int8", "int32": "int32"}


def _interpreter(model_bytes: bytes) -> tf.lite.Interpreter:
    interp = tf.lite.Interpreter(
        model_content=model_bytes,
        num_threads=1,
        experimental_op_resolver_type=tf.lite.experimental.OpResolverType.BUILTIN_WITHOUT_DEFAULT_DELEGATES,
    )
    interp.allocate_tensors()
    return interp


def layer_listing(model_bytes: bytes) -> list[dict]:
    """Per-operator (identifier, shape, dtype, opcode) via the TFLite runtime."""
    interp = _interpreter(model_bytes)
    listing = []
    for od in interp._get_ops_details():
        if od["op_name"] == "DELEGATE":
            continue
        out = int(od["outputs"][0])
        td = interp._get_tensor_details(out, 0)
        dtype = _NP_DTYPE_NAMES.get(np.dtype(td["dtype"]).name, "other")
        listing.append(
            {
                "identifier": td["name"],
                "shape": [int(d) for d in td["shape"]],
                "dtype": dtype,
                "opcode": od["op_name"],
            }
        )
    return listing


def run_float(interp: tf.lite.Interpreter, x: np.ndarray) -> np.ndarray:
    detail = interp.get_input_details()[0]
    interp.set_tensor(detail["index"], x.astype(np.float32))
    interp.invoke()
    out = interp.get_tensor(interp.get_output_details()[0]["index"])
    return out.reshape(-1)


def run_quant_uint8(interp: tf.lite.Interpreter, x01: np.ndarray) -> np.ndarray:
    detail = interp.get_input_details()[0]
    scale, zero = detail["quantization"]
    q = np.clip(np.round(x01 / scale + zero), 0, 255).astype(np.uint8)
    interp.set_tensor(detail["index"], q)
    interp.invoke()
    return interp.get_tensor(interp.get_output_details()[0]["index"]).reshape(-1)


def pick_examples(model_bytes: bytes, seed: int, band: tuple[float, float]) -> tuple[list[np.ndarray], list[int]]:
    """Candidates in the margin band: confidently classified but attackable."""
    interp = _interpreter(model_bytes)
    rng = np.random.default_rng(seed)
    banded: list[tuple[float, np.ndarray, int]] = []
    fallback: list[tuple[float, np.ndarray, int]] = []
    lo, hi = band
    for _ in range(EXAMPLE_CANDIDATES):
        x = rng.uniform(0, 1, size=(1, *INPUT_SHAPE)).astype(np.float32)
        probs = run_float(interp, x)
        order = np.argsort(probs)[::-1]
        margin = float(probs[order[0]] - probs[order[1]])
        record = (margin, x, int(order[0]))
        fallback.append(record)
        if lo <= margin <= hi:
            banded.append(record)
        if len(banded) >= EXAMPLES_PER_TARGET:
            break
    if len(banded) < EXAMPLES_PER_TARGET:
        # pad with the candidates closest to the band
        mid = (lo + hi) / 2
        fallback.sort(key=lambda r: abs(r[0] - mid))
        for record in fallback:
            if len(banded) >= EXAMPLES_PER_TARGET:
                break
            if not any(record[1] is b[1] for b in banded):
                banded.append(record)
    banded = banded[:EXAMPLES_PER_TARGET]
    return [x for _, x, _ in banded], [y for _, _, y in banded]


def generate_corpus(out_dir: str | Path, seed: int = 0) -> dict:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "reference").mkdir(exist_ok=True)
    (out / "examples").mkdir(exist_ok=True)

    blobs: dict[str, bytes] = {}
    lineage: dict[str, dict] = {}

    for name in BASES:
        raw = convert_float(build_base(name, seed))
        blobs[name] = rename_tensors(raw, name)
        lineage[name] = {"base": None, "method": "base"}

    base_op_counts = {name: len(layer_listing(blobs[name])) for name in BASES}

    for name, base, method, head_noise, _band in DERIVED:
        raw = convert_float(build_derived(name, base, method, seed, head_noise))
        shared = base_op_counts[base] if method != "fine-tune" else 10**6
        blobs[name] = rename_tensors(raw, name, shared_prefix_ops=shared, prefix_owner=base)
        lineage[name] = {"base": base, "method": method}

    quant_raw = convert_quantized_uint8(build_base(QUANT_BASE, seed), calib_seed=stable_seed(seed, "calib"))
    blobs[QUANT_NAME] = rename_tensors(quant_raw, QUANT_NAME)
    lineage[QUANT_NAME] = {"base": QUANT_BASE, "method": "quantized"}

    for name, blob in blobs.items():
        (out / "models" / f"{name}.tflite").write_bytes(blob)

    # shared reference inputs + per-model outputs
    ref_rng = np.random.default_rng(stable_seed(seed, "reference"))
    ref_inputs = [ref_rng.uniform(0, 1, size=(1, *INPUT_SHAPE)).astype(np.float32)
                  for _ in range(REFERENCE_INPUTS)]
    ref_files = []
    for k, x in enumerate(ref_inputs):
        path = out / "reference" / f"in_{k:02d}.tnsr"
        write_tensor(path, x)
        ref_files.append(str(path.relative_to(out)))

    models_doc: dict[str, dict] = {}
    for name, blob in blobs.items():
        interp = _interpreter(blob)
        in_detail = interp.get_input_details()[0]
        in_dtype = np.dtype(in_detail["dtype"]).name
        entry = {
            "file": f"models/{name}.tflite",
            "sha256": hashlib.sha256(blob).hexdigest(),
            "lineage": lineage[name],
            "layers": layer_listing(blob),
            "input": {
                "shape": [int(d) for d in in_detail["shape"]],
                "dtype": _NP_DTYPE_NAMES.get(in_dtype, "other"),
                "scale": float(in_detail["quantization"][0]),
                "zero_point": int(in_detail["quantization"][1]),
            },
        }
        if name != QUANT_NAME:
            entry["reference_outputs"] = [
                [float(v) for v in run_float(interp, x)] for x in ref_inputs
            ]
        models_doc[name] = entry

    # quantization agreement data: float parent vs uint8 variant argmax
    agree_seed = stable_seed(seed, "agreement")
    agree_rng = np.random.default_rng(agree_seed)
    float_interp = _interpreter(blobs[QUANT_BASE])
    quant_interp = _interpreter(blobs[QUANT_NAME])
    float_argmax, quant_argmax = [], []
    for _ in range(AGREEMENT_INPUTS):
        x = agree_rng.uniform(0, 1, size=(1, *INPUT_SHAPE)).astype(np.float32)
        float_argmax.append(int(np.argmax(run_float(float_interp, x))))
        quant_argmax.append(int(np.argmax(run_quant_uint8(quant_interp, x))))
    models_doc[QUANT_NAME]["agreement"] = {
        "seed": agree_seed,
        "count": AGREEMENT_INPUTS,
        "float_model": QUANT_BASE,
        "float_argmax": float_argmax,
        "quant_argmax": quant_argmax,
    }

    examples_doc: dict[str, dict] = {}
    for target in TARGETS:
        xs, labels = pick_examples(blobs[target], stable_seed(seed, "examples", target), MARGIN_BANDS[target])
        target_dir = out / "examples" / target
        target_dir.mkdir(parents=True, exist_ok=True)
        label_map = {}
        for i, (x, y) in enumerate(zip(xs, labels)):
            fname = f"{i:02d}.tnsr"
            write_tensor(target_dir / fname, x)
            label_map[fname] = int(y)
        (target_dir / "labels.json").write_text(json.dumps(label_map, indent=2, sort_keys=True) + "\n")
        examples_doc[target] = {"dir": f"examples/{target}", "labels": label_map}

    manifest = {
        "seed": seed,
        "input_shape": [1, *INPUT_SHAPE],
        "classes": CLASSES,
        "reference_inputs": ref_files,
        "models": models_doc,
        "examples": examples_doc,
        "targets": list(TARGETS),
        "registry_bases": list(BASES),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
