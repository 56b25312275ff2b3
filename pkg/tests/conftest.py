"""Shared fixtures: the committed corpus, parsed graphs, a digest registry."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for tflite_builder

from modelprobe.engine.model import EngineModel, LabeledExample
from modelprobe.engine.tensor import read_tensor
from modelprobe.registry import load_registry, write_fingerprint
from modelprobe.tflite.parser import parse_model

CORPUS_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    assert CORPUS_DIR.is_dir(), "committed corpus missing; run: python3 -m fixturegen.cli --out fixtures/corpus --seed 0"
    return CORPUS_DIR


@pytest.fixture(scope="session")
def manifest(corpus_dir) -> dict:
    return json.loads((corpus_dir / "manifest.json").read_text())


@pytest.fixture(scope="session")
def model_bytes(corpus_dir, manifest):
    return {name: (corpus_dir / entry["file"]).read_bytes() for name, entry in manifest["models"].items()}


@pytest.fixture(scope="session")
def graphs(model_bytes):
    return {name: parse_model(blob, name=name) for name, blob in model_bytes.items()}


@pytest.fixture(scope="session")
def engines(graphs):
    return {name: EngineModel.from_graph(g) for name, g in graphs.items()}


@pytest.fixture(scope="session")
def registry(tmp_path_factory, manifest, model_bytes):
    regdir = tmp_path_factory.mktemp("registry")
    for base in manifest["registry_bases"]:
        write_fingerprint(regdir, base, "image-classification", model_bytes[base])
    return load_registry(regdir)


@pytest.fixture(scope="session")
def examples(corpus_dir, manifest):
    out: dict[str, list[LabeledExample]] = {}
    for target, entry in manifest["examples"].items():
        exs = []
        for fname, label in sorted(entry["labels"].items()):
            x = read_tensor(corpus_dir / entry["dir"] / fname).astype(np.float32)
            exs.append(LabeledExample(x=x, y_true=int(label)))
        out[target] = exs
    return out


@pytest.fixture(scope="session")
def reference_inputs(corpus_dir, manifest):
    return [read_tensor(corpus_dir / rel).astype(np.float32) for rel in manifest["reference_inputs"]]
