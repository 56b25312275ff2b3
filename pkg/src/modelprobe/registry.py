"""Registry of pre-trained model fingerprints and ancestor matching.

A fingerprint stores the layer sequence plus per-layer weight digests, which
is enough to compute both similarity metrics against a query model: digest
equality is exactly positional weight equality. The full weight blob (the
TFLite file itself) is optional and, when present, digest-verified on load.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptRegistry, IoFailure
from .similarity import (
    PARAMETRIC_GATE,
    MatchPolicy,
    SimilarityScore,
    lcs_length,
    longest_true_run,
)
from .tflite.model import DType, LayerUnit, ModelGraph, ParamVector
from .tflite.parser import parse_model

FINGERPRINT_SUFFIX = ".fingerprint.json"
FEATURE_EXTRACTION_GATE = 0.95  # "more than 95% parameter value similar"


class Tuning(enum.Enum):
    IDENTICAL = "identical"
    FEATURE_EXTRACTION = "feature-extraction"
    FINE_TUNED = "fine-tuned"
    UNRELATED = "unrelated"


def param_digest(vec: ParamVector) -> str:
    header = f"{vec.dtype.value}|{','.join(map(str, vec.weight_shape))}|".encode()
    return hashlib.sha256(header + vec.weights.tobytes()).hexdigest()


@dataclass
class Fingerprint:
    name: str
    task_domain: str
    layer_sequence: list[LayerUnit]
    param_digests: list[str]
    model_path: str | None = None
    graph: ModelGraph | None = None  # populated when the weight blob is stored


@dataclass
class PretrainedMatch:
    query: str
    best: str | None
    score: SimilarityScore
    tuning: Tuning

    def as_dict(self) -> dict:
        return {
            "query": self.query,
            "best": self.best,
            "tuning": self.tuning.value,
            **self.score.as_dict(),
        }


class Registry:
    def __init__(self, fingerprints: list[Fingerprint]):
        self.fingerprints = sorted(fingerprints, key=lambda f: f.name)

    def __len__(self) -> int:
        return len(self.fingerprints)

    def __iter__(self):
        return iter(self.fingerprints)

    def get(self, name: str) -> Fingerprint | None:
        for fp in self.fingerprints:
            if fp.name == name:
                return fp
        return None


def fingerprint_from_graph(name: str, task_domain: str, graph: ModelGraph) -> Fingerprint:
    return Fingerprint(
        name=name,
        task_domain=task_domain,
        layer_sequence=list(graph.layers),
        param_digests=[param_digest(p) for p in graph.params],
        graph=graph,
    )


def write_fingerprint(
    registry_dir: str | Path,
    name: str,
    task_domain: str,
    model_bytes: bytes,
    *,
    store_model: bool = True,
) -> Path:
    """Fingerprint a TFLite blob into a registry directory."""
    registry_dir = Path(registry_dir)
    registry_dir.mkdir(parents=True, exist_ok=True)
    graph = parse_model(model_bytes, name=name)
    fp = fingerprint_from_graph(name, task_domain, graph)
    doc = {
        "name": name,
        "task_domain": task_domain,
        "layer_sequence": [
            {"identifier": u.identifier, "shape": list(u.shape), "dtype": u.dtype.value, "opcode": u.opcode}
            for u in fp.layer_sequence
        ],
        "param_digests": fp.param_digests,
        "model_file": f"{name}.tflite" if store_model else None,
    }
    if store_model:
        (registry_dir / f"{name}.tflite").write_bytes(model_bytes)
    out = registry_dir / f"{name}{FINGERPRINT_SUFFIX}"
    out.write_text(json.dumps(doc, indent=2) + "\n")
    return out


def load_registry(path: str | Path) -> Registry:
    """Load and digest-verify every fingerprint in a registry directory."""
    path = Path(path)
    if not path.is_dir():
        raise IoFailure(f"{path}: not a directory")
    fingerprints = []
    for fp_path in sorted(path.glob(f"*{FINGERPRINT_SUFFIX}")):
        try:
            doc = json.loads(fp_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptRegistry(f"{fp_path}: unreadable fingerprint: {exc}") from exc
        units = [
            LayerUnit(
                identifier=u["identifier"],
                shape=tuple(u["shape"]),
                dtype=DType(u["dtype"]),
                opcode=u.get("opcode", ""),
            )
            for u in doc["layer_sequence"]
        ]
        digests = list(doc["param_digests"])
        if len(digests) != len(units):
            raise CorruptRegistry(f"{fp_path}: {len(digests)} digests for {len(units)} layers")
        fp = Fingerprint(
            name=doc["name"],
            task_domain=doc.get("task_domain", ""),
            layer_sequence=units,
            param_digests=digests,
        )
        model_file = doc.get("model_file")
        if model_file:
            blob_path = path / model_file
            if not blob_path.exists():
                raise CorruptRegistry(f"{fp_path}: weight blob {model_file} is missing")
            graph = parse_model(blob_path.read_bytes(), name=fp.name, source_path=str(blob_path))
            stored = [param_digest(p) for p in graph.params]
            if stored != digests:
                raise CorruptRegistry(f"{fp_path}: weight blob does not hash to the stored digests")
            fp.graph = graph
            fp.model_path = str(blob_path)
        fingerprints.append(fp)
    return Registry(fingerprints)


def score_against_fingerprint(
    model: ModelGraph, fp: Fingerprint, policy: MatchPolicy = MatchPolicy.RELAXED
) -> SimilarityScore:
    l_match = lcs_length(model.layers, fp.layer_sequence, policy)
    l_total = len(model.layers) + len(fp.layer_sequence)
    structural = 1.0 if l_total == 0 else 2.0 * l_match / l_total
    if structural < PARAMETRIC_GATE:
        return SimilarityScore(structural, None, l_match, l_total, 0, 0)
    query_digests = [param_digest(p) for p in model.params]
    n_total = min(len(query_digests), len(fp.param_digests))
    flags = [query_digests[i] == fp.param_digests[i] for i in range(n_total)]
    n_true = longest_true_run(flags)
    parametric = 1.0 if n_total == 0 else n_true / n_total
    return SimilarityScore(structural, parametric, l_match, l_total, n_true, n_total)


def classify_tuning(score: SimilarityScore) -> Tuning:
    if score.structural < PARAMETRIC_GATE:
        return Tuning.UNRELATED
    parametric = score.parametric if score.parametric is not None else 0.0
    if score.structural == 1.0 and parametric == 1.0:
        return Tuning.IDENTICAL
    if parametric > FEATURE_EXTRACTION_GATE:
        return Tuning.FEATURE_EXTRACTION
    return Tuning.FINE_TUNED


def match_pretrained(
    model: ModelGraph, registry: Registry, policy: MatchPolicy = MatchPolicy.RELAXED
) -> PretrainedMatch:
    """Most similar fingerprint: argmax structural, ties by parametric then name."""
    query = model.meta.name or model.meta.digest[:12]
    best_fp: Fingerprint | None = None
    best_score: SimilarityScore | None = None
    for fp in registry:  # registry iterates in ascending name order
        score = score_against_fingerprint(model, fp, policy)
        if best_score is None or _score_rank(score) > _score_rank(best_score):
            best_fp, best_score = fp, score
    if best_score is None:
        return PretrainedMatch(
            query=query,
            best=None,
            score=SimilarityScore(0.0, None, 0, len(model.layers), 0, 0),
            tuning=Tuning.UNRELATED,
        )
    tuning = classify_tuning(best_score)
    name = best_fp.name if best_score.structural >= PARAMETRIC_GATE else None
    return PretrainedMatch(query=query, best=name, score=best_score, tuning=tuning)


def _score_rank(score: SimilarityScore) -> tuple[float, float]:
    parametric = score.parametric if score.parametric is not None else -1.0
    return (score.structural, parametric)


def classify_corpus(
    models: list[ModelGraph], registry: Registry, policy: MatchPolicy = MatchPolicy.RELAXED
) -> dict:
    """Per-model matches plus per-tuning and per-fingerprint counts."""
    matches = [match_pretrained(m, registry, policy) for m in models]
    by_tuning: dict[str, int] = {t.value: 0 for t in Tuning}
    by_fingerprint: dict[str, int] = {}
    for m in matches:
        by_tuning[m.tuning.value] += 1
        if m.best is not None:
            by_fingerprint[m.best] = by_fingerprint.get(m.best, 0) + 1
    return {
        "matches": [m.as_dict() for m in matches],
        "by_tuning": by_tuning,
        "by_fingerprint": dict(sorted(by_fingerprint.items())),
        "total": len(matches),
    }
