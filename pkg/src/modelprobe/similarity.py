"""Structural and parametric similarity between parsed models.

Structural similarity is 2*L_match/L_total where L_match is the longest
common subsequence of the two layer sequences and L_total the summed layer
counts. Parametric similarity is the longest run of positionally
weight-identical layers divided by the number of aligned positions, and is
only defined once structural similarity reaches 0.8.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .tflite.model import LayerUnit, ModelGraph, ParamVector

PARAMETRIC_GATE = 0.8


class MatchPolicy(enum.Enum):
    STRICT = "strict"  # (identifier, shape, dtype)
    RELAXED = "relaxed"  # (opcode, shape, dtype)

    def key(self, unit: LayerUnit) -> tuple:
        return unit.strict_key() if self is MatchPolicy.STRICT else unit.relaxed_key()


@dataclass(frozen=True)
class SimilarityScore:
    structural: float
    parametric: float | None  # None while structural is below the 0.8 gate
    l_match: int
    l_total: int
    n_true: int
    n_total: int

    def as_dict(self) -> dict:
        return {
            "structural": self.structural,
            "parametric": self.parametric,
            "l_match": self.l_match,
            "l_total": self.l_total,
            "n_true": self.n_true,
            "n_total": self.n_total,
        }


def lcs_length(a: list[LayerUnit], b: list[LayerUnit], policy: MatchPolicy = MatchPolicy.STRICT) -> int:
    """Classical O(|a|*|b|) LCS length under the policy's unit equality."""
    ka = [policy.key(u) for u in a]
    kb = [policy.key(u) for u in b]
    if not ka or not kb:
        return 0
    prev = [0] * (len(kb) + 1)
    for i in range(1, len(ka) + 1):
        cur = [0] * (len(kb) + 1)
        ai = ka[i - 1]
        for j in range(1, len(kb) + 1):
            if ai == kb[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] >= prev[j] else prev[j]
        prev = cur
    return prev[len(kb)]


def structural_similarity(m1: ModelGraph, m2: ModelGraph, policy: MatchPolicy = MatchPolicy.STRICT) -> SimilarityScore:
    """2 * L_match / L_total; a pair of empty models scores 1.0."""
    l_match = lcs_length(m1.layers, m2.layers, policy)
    l_total = len(m1.layers) + len(m2.layers)
    structural = 1.0 if l_total == 0 else 2.0 * l_match / l_total
    return SimilarityScore(
        structural=structural, parametric=None, l_match=l_match, l_total=l_total, n_true=0, n_total=0
    )


def params_equal(p1: ParamVector, p2: ParamVector, tolerance: float = 0.0) -> bool:
    """True when both vectors have equal length and zero elementwise difference.

    The default keeps the exact-subtraction semantics; a positive tolerance
    admits float models whose constants a converter perturbed slightly.
    """
    if len(p1) != len(p2):
        return False
    if len(p1) == 0:
        return True  # weightless layers never break a run
    if tolerance > 0.0:
        try:
            return bool(np.all(np.abs(p1.weights.astype(np.float64) - p2.weights.astype(np.float64)) <= tolerance))
        except TypeError:
            return False
    return bool(np.array_equal(p1.weights, p2.weights))


def position_flags(m1: ModelGraph, m2: ModelGraph, tolerance: float = 0.0) -> list[bool]:
    """Per-position weight-equality Booleans over the common prefix."""
    n = min(len(m1.params), len(m2.params))
    return [params_equal(m1.params[i], m2.params[i], tolerance) for i in range(n)]


def longest_true_run(flags: list[bool]) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        if run > best:
            best = run
    return best


def parametric_similarity(
    m1: ModelGraph, m2: ModelGraph, policy: MatchPolicy = MatchPolicy.STRICT, tolerance: float = 0.0
) -> SimilarityScore:
    """N_True / N_total over positionally aligned layers, gated on structure."""
    base = structural_similarity(m1, m2, policy)
    if base.structural < PARAMETRIC_GATE:
        return base
    flags = position_flags(m1, m2, tolerance)
    n_total = len(flags)
    n_true = longest_true_run(flags)
    parametric = 1.0 if n_total == 0 else n_true / n_total
    return SimilarityScore(
        structural=base.structural,
        parametric=parametric,
        l_match=base.l_match,
        l_total=base.l_total,
        n_true=n_true,
        n_total=n_total,
    )


def compare(
    m1: ModelGraph, m2: ModelGraph, policy: MatchPolicy = MatchPolicy.STRICT, tolerance: float = 0.0
) -> SimilarityScore:
    """Full similarity score (structural plus gated parametric)."""
    return parametric_similarity(m1, m2, policy, tolerance)


@dataclass
class SimilarityMatrix:
    names: list[str]
    layer_counts: list[int]
    scores: dict[tuple[int, int], SimilarityScore]  # upper triangle, i < j

    def at(self, i: int, j: int) -> SimilarityScore:
        if i == j:
            n = self.layer_counts[i]
            return SimilarityScore(1.0, 1.0, n, 2 * n, n, n)
        key = (i, j) if i < j else (j, i)
        return self.scores[key]

    def __len__(self) -> int:
        return len(self.names)

    def to_json(self) -> str:
        cells = [
            {"i": i, "j": j, **score.as_dict()}
            for (i, j), score in sorted(self.scores.items())
        ]
        return json.dumps({"models": self.names, "scores": cells}, indent=2)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["model_i", "model_j", "structural", "parametric",
                    "l_match", "l_total", "n_true", "n_total"])
        for (i, j), s in sorted(self.scores.items()):
            w.writerow([self.names[i], self.names[j], s.structural,
                        "" if s.parametric is None else s.parametric,
                        s.l_match, s.l_total, s.n_true, s.n_total])
        return out.getvalue()


def pairwise_matrix(
    models: list[ModelGraph], policy: MatchPolicy = MatchPolicy.STRICT, tolerance: float = 0.0
) -> SimilarityMatrix:
    """Symmetric score matrix; only the upper triangle is computed."""
    if not models:
        raise ValueError("pairwise_matrix requires at least one model")
    names = [m.meta.name or m.meta.digest[:12] for m in models]
    scores = {}
    for i in range(len(models)):
        for j in range(i + 1, len(models)):
            scores[(i, j)] = compare(models[i], models[j], policy, tolerance)
    return SimilarityMatrix(names=names, layer_counts=[len(m.layers) for m in models], scores=scores)
