"""Targeted-vs-blind attack experiment: success rates, reports, correlation.

The targeted arm crafts on the matched pre-trained ancestor, the blind arm on
a seeded random non-matching registry model; both arms share examples, kinds
and configs, so the surrogate is the only varying factor.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import ALL_KINDS, AttackConfig, AttackKind, run_attack
from .engine.model import EngineModel, LabeledExample
from .errors import EmptyExampleSet, EmptyRegistry, LengthMismatch
from .registry import MatchPolicy, PretrainedMatch, Registry, match_pretrained
from .tflite.model import ModelGraph

ARMS = ("T", "B")


def stable_seed(*parts) -> int:
    """Process-independent 63-bit seed derived from the given parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


@dataclass
class CellResult:
    kind: AttackKind
    n_success: int
    m: int
    successes: list[bool]
    adv_examples: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def p(self) -> float:
        return self.n_success / self.m

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "n": self.n_success, "m": self.m, "p": self.p,
                "successes": self.successes}


@dataclass
class ArmResult:
    arm: str
    surrogate: str | None
    note: str = ""
    cells: dict[AttackKind, CellResult] = field(default_factory=dict)

    @property
    def skipped(self) -> bool:
        return self.surrogate is None

    @property
    def average(self) -> float | None:
        if not self.cells:
            return None
        return sum(c.p for c in self.cells.values()) / len(self.cells)


@dataclass
class TargetReport:
    target: str
    match: PretrainedMatch
    excluded: list[int]
    m: int
    arms: dict[str, ArmResult] = field(default_factory=dict)


@dataclass
class EvalReport:
    kinds: list[AttackKind]
    targets: list[str]
    per_target: dict[str, TargetReport]
    seed: int

    def attack_average(self, kind: AttackKind, arm: str) -> float | None:
        cells = [
            tr.arms[arm].cells[kind].p
            for tr in self.per_target.values()
            if arm in tr.arms and not tr.arms[arm].skipped and kind in tr.arms[arm].cells
        ]
        return sum(cells) / len(cells) if cells else None

    def grand_average(self, arm: str) -> float | None:
        cells = [
            cell.p
            for tr in self.per_target.values()
            if arm in tr.arms and not tr.arms[arm].skipped
            for cell in tr.arms[arm].cells.values()
        ]
        return sum(cells) / len(cells) if cells else None


@dataclass
class CorrelationReport:
    pairs: list[tuple[str, float, float]]  # (target, similarity, targeted avg success)
    pcc: float | None


def evaluate_attack(
    target: EngineModel,
    surrogate: EngineModel,
    kind: AttackKind,
    examples: list[LabeledExample],
    config: AttackConfig | None = None,
    *,
    prefiltered: bool = False,
) -> CellResult:
    """Success rate P_i = n_i / m over examples the target classifies correctly."""
    if prefiltered:
        retained = list(examples)
    else:
        retained, _ = filter_examples(target, examples)
    if not retained:
        raise EmptyExampleSet("no correctly-classified examples to attack")
    base = config or AttackConfig(kind=kind)
    successes = []
    advs = []
    for idx, ex in enumerate(retained):
        cfg = AttackConfig(kind=kind, epsilon=base.epsilon, steps=base.steps,
                           step_size=base.step_size, seed=stable_seed(base.seed, kind.value, idx))
        outcome = run_attack(kind, surrogate, target, ex, cfg)
        successes.append(bool(outcome.success))
        advs.append(outcome.x_adv)
    return CellResult(kind=kind, n_success=sum(successes), m=len(retained),
                      successes=successes, adv_examples=advs)


def filter_examples(
    target: EngineModel, examples: list[LabeledExample]
) -> tuple[list[LabeledExample], list[int]]:
    """Keep examples the target classifies correctly; report excluded indices."""
    retained, excluded = [], []
    for i, ex in enumerate(examples):
        if target.predict(ex.x) == ex.y_true:
            retained.append(ex)
        else:
            excluded.append(i)
    return retained, excluded


def run_arms(
    target_name: str,
    target: EngineModel,
    surrogates: dict[str, EngineModel | None],
    notes: dict[str, str],
    examples: list[LabeledExample],
    kinds: list[AttackKind],
    seed: int,
    configs: dict[AttackKind, AttackConfig] | None = None,
) -> dict[str, ArmResult]:
    """Evaluate every (arm, kind) cell; both arms share per-cell configs."""
    retained, _ = filter_examples(target, examples)
    if not retained:
        raise EmptyExampleSet(f"{target_name}: no correctly-classified examples")
    arms: dict[str, ArmResult] = {}
    for arm, surrogate in surrogates.items():
        surrogate_name = getattr(surrogate, "name", None)
        result = ArmResult(arm=arm, surrogate=surrogate_name, note=notes.get(arm, ""))
        if surrogate is not None:
            for kind in kinds:
                base = (configs or {}).get(kind) or AttackConfig(kind=kind)
                cell_cfg = AttackConfig(kind=kind, epsilon=base.epsilon, steps=base.steps,
                                        step_size=base.step_size,
                                        seed=stable_seed(seed, target_name, kind.value))
                result.cells[kind] = evaluate_attack(
                    target, surrogate, kind, retained, cell_cfg, prefiltered=True
                )
        arms[arm] = result
    return arms


def targeted_vs_blind(
    target_graph: ModelGraph,
    registry: Registry,
    examples: list[LabeledExample],
    kinds: list[AttackKind] | None = None,
    seed: int = 0,
    policy: MatchPolicy = MatchPolicy.RELAXED,
    configs: dict[AttackKind, AttackConfig] | None = None,
) -> TargetReport:
    if len(registry) == 0:
        raise EmptyRegistry("targeted_vs_blind requires a non-empty registry")
    kinds = list(kinds or ALL_KINDS)
    target_name = target_graph.meta.name or target_graph.meta.digest[:12]
    target = EngineModel.from_graph(target_graph)
    match = match_pretrained(target_graph, registry, policy)

    surrogates: dict[str, EngineModel | None] = {}
    notes: dict[str, str] = {}
    if match.best is None:
        surrogates["T"] = None
        notes["T"] = "no pre-trained ancestor reaches the structural threshold"
    else:
        fp = registry.get(match.best)
        if fp is None or fp.graph is None:
            surrogates["T"] = None
            notes["T"] = f"matched fingerprint {match.best} has no stored weights"
        else:
            surrogates["T"] = EngineModel.from_graph(fp.graph, name=fp.name)
            notes["T"] = ""

    blind_pool = [fp for fp in registry if fp.name != match.best and fp.graph is not None]
    if not blind_pool:
        surrogates["B"] = None
        notes["B"] = "no non-matching registry entry to draw a blind surrogate from"
    else:
        rng = np.random.default_rng(stable_seed("blind-surrogate", seed, target_name))
        fp = blind_pool[int(rng.integers(0, len(blind_pool)))]
        surrogates["B"] = EngineModel.from_graph(fp.graph, name=fp.name)
        notes["B"] = ""

    retained, excluded = filter_examples(target, examples)
    if not retained:
        raise EmptyExampleSet(f"{target_name}: no correctly-classified examples")
    arms = run_arms(target_name, target, surrogates, notes, retained, kinds, seed, configs)
    return TargetReport(target=target_name, match=match, excluded=excluded, m=len(retained), arms=arms)


def run_experiment(
    targets: list[ModelGraph],
    registry: Registry,
    examples_by_target: dict[str, list[LabeledExample]],
    kinds: list[AttackKind] | None = None,
    seed: int = 0,
    policy: MatchPolicy = MatchPolicy.RELAXED,
    configs: dict[AttackKind, AttackConfig] | None = None,
) -> EvalReport:
    kinds = list(kinds or ALL_KINDS)
    per_target = {}
    names = []
    for graph in targets:
        name = graph.meta.name or graph.meta.digest[:12]
        names.append(name)
        per_target[name] = targeted_vs_blind(
            graph, registry, examples_by_target[name], kinds, seed, policy, configs
        )
    return EvalReport(kinds=kinds, targets=names, per_target=per_target, seed=seed)


def pearson(xs: list[float], ys: list[float]) -> float | None:
    """Standard Pearson correlation; None when either series is constant."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"series lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise LengthMismatch("pearson requires at least two points")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float((xd * xd).sum()) * float((yd * yd).sum()))
    if denom == 0.0:
        return None
    return float((xd * yd).sum() / denom)


def similarity_success_correlation(report: EvalReport) -> CorrelationReport:
    """PCC between similarity-to-ancestor and the targeted-arm average success."""
    pairs = []
    for name in report.targets:
        tr = report.per_target[name]
        arm = tr.arms.get("T")
        if arm is None or arm.skipped or arm.average is None:
            continue
        pairs.append((name, tr.match.score.structural, arm.average))
    if len(pairs) < 2:
        return CorrelationReport(pairs=pairs, pcc=None)
    pcc = pearson([p[1] for p in pairs], [p[2] for p in pairs])
    return CorrelationReport(pairs=pairs, pcc=pcc)


# -- serialization -------------------------------------------------------------


def report_to_json(report: EvalReport) -> str:
    doc = {
        "kinds": [k.value for k in report.kinds],
        "targets": report.targets,
        "seed": report.seed,
        "per_target": {
            name: {
                "target": tr.target,
                "match": tr.match.as_dict(),
                "excluded": tr.excluded,
                "m": tr.m,
                "arms": {
                    arm: {
                        "surrogate": res.surrogate,
                        "note": res.note,
                        "cells": {k.value: c.as_dict() for k, c in res.cells.items()},
                    }
                    for arm, res in tr.arms.items()
                },
            }
            for name, tr in report.per_target.items()
        },
        "attack_averages": {
            k.value: {arm: report.attack_average(k, arm) for arm in ARMS} for k in report.kinds
        },
        "grand_averages": {arm: report.grand_average(arm) for arm in ARMS},
    }
    return json.dumps(doc, indent=2)


def report_from_json(text: str) -> EvalReport:
    from .registry import Tuning  # local import to avoid cycle at module load
    from .similarity import SimilarityScore

    doc = json.loads(text)
    kinds = [AttackKind(k) for k in doc["kinds"]]
    per_target = {}
    for name, td in doc["per_target"].items():
        md = td["match"]
        match = PretrainedMatch(
            query=md["query"],
            best=md["best"],
            score=SimilarityScore(
                structural=md["structural"], parametric=md["parametric"],
                l_match=md["l_match"], l_total=md["l_total"],
                n_true=md["n_true"], n_total=md["n_total"],
            ),
            tuning=Tuning(md["tuning"]),
        )
        arms = {}
        for arm, ad in td["arms"].items():
            cells = {
                AttackKind(k): CellResult(
                    kind=AttackKind(k), n_success=c["n"], m=c["m"],
                    successes=[bool(s) for s in c["successes"]],
                )
                for k, c in ad["cells"].items()
            }
            arms[arm] = ArmResult(arm=arm, surrogate=ad["surrogate"], note=ad["note"], cells=cells)
        per_target[name] = TargetReport(
            target=td["target"], match=match, excluded=list(td["excluded"]), m=td["m"], arms=arms
        )
    return EvalReport(kinds=kinds, targets=list(doc["targets"]), per_target=per_target, seed=doc["seed"])


def render_report(report: EvalReport) -> dict[str, str]:
    """Both renderings of the attack/model grid: Markdown and JSON."""
    return {"markdown": render_markdown(report), "json": report_to_json(report)}


def render_markdown(report: EvalReport) -> str:
    """Attack rows, per-target T/B columns, bolded better cell, average row."""

    def fmt(p: float | None, other: float | None) -> str:
        if p is None:
            return "-"
        text = f"{p:.2f}".rstrip("0").rstrip(".") or "0"
        if other is None or p > other:
            return f"**{text}**"
        return text

    header = ["Attack", "Epsilon"]
    for name in report.targets:
        header.extend([f"{name} T", f"{name} B"])
    header.extend(["Average T", "Average B"])
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]

    from .attacks import DEFAULT_EPSILON

    for kind in report.kinds:
        row = [kind.value, str(DEFAULT_EPSILON[kind])]
        for name in report.targets:
            tr = report.per_target[name]
            pt = _cell_p(tr, "T", kind)
            pb = _cell_p(tr, "B", kind)
            row.extend([fmt(pt, pb), fmt(pb, pt)])
        at, ab = report.attack_average(kind, "T"), report.attack_average(kind, "B")
        row.extend([fmt(at, ab), fmt(ab, at)])
        lines.append("| " + " | ".join(row) + " |")

    row = ["Average (Models)", ""]
    for name in report.targets:
        tr = report.per_target[name]
        ta = tr.arms["T"].average if "T" in tr.arms else None
        ba = tr.arms["B"].average if "B" in tr.arms else None
        row.extend([fmt(ta, ba), fmt(ba, ta)])
    gt, gb = report.grand_average("T"), report.grand_average("B")
    row.extend([fmt(gt, gb), fmt(gb, gt)])
    lines.append("| " + " | ".join(row) + " |")

    notes = []
    for name in report.targets:
        tr = report.per_target[name]
        if tr.excluded:
            notes.append(f"- {name}: examples {tr.excluded} excluded (misclassified before attack)")
        for arm, res in tr.arms.items():
            if res.skipped:
                notes.append(f"- {name}: arm {arm} skipped: {res.note}")
    if notes:
        lines.extend(["", "Notes:", *notes])
    return "\n".join(lines) + "\n"


def _cell_p(tr: TargetReport, arm: str, kind: AttackKind) -> float | None:
    res = tr.arms.get(arm)
    if res is None or res.skipped or kind not in res.cells:
        return None
    return res.cells[kind].p
