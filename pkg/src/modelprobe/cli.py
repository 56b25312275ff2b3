"""Command-line entry point: dig, compare, graph, match, attack, experiment."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import ALL_KINDS, AttackConfig, AttackKind, run_attack
from .digger import extract_models, scan_archive, write_manifest
from .engine.model import EngineModel, LabeledExample
from .engine.tensor import read_tensor, write_tensor
from .errors import ModelProbeError
from .harness import (
    render_markdown,
    report_to_json,
    run_experiment,
    similarity_success_correlation,
)
from .registry import load_registry, match_pretrained
from .relation import build_graph, detect_communities, export_graph
from .similarity import MatchPolicy, SimilarityMatrix, compare, pairwise_matrix
from .tflite.parser import parse_model

logger = logging.getLogger("modelprobe")

REGISTRY_ENV = "MODELPROBE_REGISTRY"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ModelProbeError as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(error), file=sys.stderr)
        return 1
    except OSError as exc:
        error = {"error": {"type": "IoFailure", "message": str(exc)}}
        print(json.dumps(error), file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modelprobe",
                                     description="Extract, relate, and attack on-device TFLite models.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dig", help="scan archives for embedded models and extract them")
    p.add_argument("archives", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dig)

    p = sub.add_parser("compare", help="similarity between two models, or a pairwise matrix")
    p.add_argument("models", nargs="+")
    p.add_argument("--policy", choices=["strict", "relaxed"], default="strict")
    p.add_argument("--tolerance", type=float, default=0.0,
                   help="absolute weight tolerance for parametric equality (default exact)")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("graph", help="build the relation graph and detect communities")
    p.add_argument("models", nargs="+")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=["strict", "relaxed"], default="strict")
    p.add_argument("--labels", help="dig manifest (models.json) to label nodes as app + extraction order")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_graph)

    p = sub.add_parser("match", help="locate the most similar pre-trained ancestor")
    p.add_argument("models", nargs="+")
    p.add_argument("--registry", default=os.environ.get(REGISTRY_ENV))
    p.add_argument("--policy", choices=["strict", "relaxed"], default="relaxed")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("attack", help="craft one adversarial example and evaluate transfer")
    p.add_argument("--kind", required=True, choices=[k.value for k in ALL_KINDS])
    p.add_argument("--surrogate", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--input", dest="input_tensor", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("experiment", help="targeted vs blind attack sweep with report")
    p.add_argument("--targets", required=True)
    p.add_argument("--registry", default=os.environ.get(REGISTRY_ENV))
    p.add_argument("--examples", required=True)
    p.add_argument("--kinds", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=["strict", "relaxed"], default="relaxed")
    p.add_argument("--out", required=True)
    p.add_argument("--no-adv", dest="save_adv", action="store_false",
                   help="skip writing per-cell x_adv tensors")
    p.set_defaults(func=_cmd_experiment, save_adv=True)

    return parser


# -- helpers -------------------------------------------------------------------


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(args: argparse.Namespace, inputs: list[str | Path]) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    return {
        "tool": "modelprobe",
        "version": __version__,
        "config": config,
        "inputs": {str(p): _digest(p) for p in sorted(map(str, inputs)) if Path(p).is_file()},
    }


def _emit(doc: dict, args: argparse.Namespace, inputs: list[str | Path], out_name: str) -> None:
    """Print JSON; when --out is given, also write it plus a run manifest."""
    manifest = _manifest(args, inputs)
    out_dir = getattr(args, "out", None)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / out_name).write_text(json.dumps(doc, indent=2) + "\n")
        (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        print(json.dumps(doc, indent=2))
    else:
        print(json.dumps({**doc, "manifest": manifest}, indent=2))


def _load_graphs(paths: list[str]):
    graphs = []
    for path in paths:
        p = Path(path)
        graphs.append(parse_model(p.read_bytes(), name=p.stem, source_path=str(p)))
    return graphs


def _matrix_doc(matrix: SimilarityMatrix) -> dict:
    return json.loads(matrix.to_json())


# -- commands ------------------------------------------------------------------


def _cmd_dig(args) -> int:
    from .digger import OPERABILITY_SEED

    candidates = []
    for archive in args.archives:
        found = scan_archive(archive)
        logger.debug("%s: %d candidates", archive, len(found))
        candidates.extend(found)
    extracted = extract_models(candidates, args.out)
    out = Path(args.out)
    write_manifest(extracted, out / "models.json")
    manifest = _manifest(args, args.archives)
    manifest["operability_seed"] = OPERABILITY_SEED
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(json.dumps([e.manifest_record() for e in extracted], indent=2))
    return 0


def _cmd_compare(args) -> int:
    graphs = _load_graphs(args.models)
    policy = MatchPolicy(args.policy)
    if len(graphs) == 2:
        score = compare(graphs[0], graphs[1], policy, args.tolerance)
        _emit(score.as_dict(), args, args.models, "compare.json")
        return 0
    if args.jobs > 1:
        matrix = _parallel_matrix(graphs, policy, args.jobs, args.tolerance)
    else:
        matrix = pairwise_matrix(graphs, policy, args.tolerance)
    doc = _matrix_doc(matrix)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "matrix.csv").write_text(matrix.to_csv())
    _emit(doc, args, args.models, "matrix.json")
    return 0


def _parallel_matrix(graphs, policy, jobs: int, tolerance: float = 0.0) -> SimilarityMatrix:
    names = [g.meta.name or g.meta.digest[:12] for g in graphs]
    pairs = [(i, j) for i in range(len(graphs)) for j in range(i + 1, len(graphs))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        scores = list(pool.map(lambda ij: compare(graphs[ij[0]], graphs[ij[1]], policy, tolerance), pairs))
    return SimilarityMatrix(
        names=names,
        layer_counts=[len(g.layers) for g in graphs],
        scores=dict(zip(pairs, scores)),
    )


def _cmd_graph(args) -> int:
    graphs = _load_graphs(args.models)
    matrix = pairwise_matrix(graphs, MatchPolicy(args.policy))
    graph = build_graph(matrix, threshold=args.threshold)
    if args.labels:
        graph.nodes = _dig_labels(args.labels, graphs)
    graph.communities = detect_communities(graph, seed=args.seed)
    doc = {
        "nodes": graph.nodes,
        "edges": [[i, j, w] for i, j, w in graph.edges],
        "communities": graph.communities,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for fmt, suffix in (("GEXF", "gexf"), ("DOT", "dot"), ("JSON", "json")):
            (out / f"relation.{suffix}").write_bytes(export_graph(graph, fmt))
    _emit(doc, args, args.models, "graph.json")
    return 0


def _dig_labels(manifest_path: str, graphs) -> list[str]:
    """Node labels for dug models: archive name plus extraction order."""
    records = json.loads(Path(manifest_path).read_text())
    by_digest: dict[str, str] = {}
    order: dict[str, int] = {}
    for record in records:
        app = Path(record["archive"]).stem
        order[app] = order.get(app, 0) + 1
        by_digest.setdefault(record["digest"], f"{app}-{order[app]}")
    return [by_digest.get(g.meta.digest, g.meta.name or g.meta.digest[:12]) for g in graphs]


def _cmd_match(args) -> int:
    registry = _registry_or_fail(args.registry)
    graphs = _load_graphs(args.models)
    policy = MatchPolicy(args.policy)
    matches = [match_pretrained(g, registry, policy).as_dict() for g in graphs]
    doc = matches[0] if len(matches) == 1 else {"matches": matches}
    _emit(doc, args, args.models, "match.json")
    return 0


def _registry_or_fail(registry_dir: str | None):
    if not registry_dir:
        raise ModelProbeError(f"no registry directory given (flag --registry or ${REGISTRY_ENV})")
    return load_registry(registry_dir)


def _cmd_attack(args) -> int:
    surrogate_graph = _load_graphs([args.surrogate])[0]
    target_graph = _load_graphs([args.target])[0]
    surrogate = EngineModel.from_graph(surrogate_graph)
    target = EngineModel.from_graph(target_graph)
    x = read_tensor(args.input_tensor).astype(np.float32)
    example = LabeledExample(x=x, y_true=args.label)
    kind = AttackKind(args.kind)
    config = AttackConfig(kind=kind, epsilon=args.epsilon, steps=args.steps,
                          step_size=args.step_size, seed=args.seed)
    outcome = run_attack(kind, surrogate, target, example, config)
    doc = outcome.as_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_tensor(out / "x_adv.tnsr", outcome.x_adv)
        doc["x_adv_file"] = str(out / "x_adv.tnsr")
    _emit(doc, args, [args.surrogate, args.target, args.input_tensor], "outcome.json")
    return 0


def load_examples_dir(examples_dir: str | Path) -> dict[str, list[LabeledExample]]:
    """Layout: <dir>/<target>/labels.json mapping tensor file names to labels."""
    examples_dir = Path(examples_dir)
    out: dict[str, list[LabeledExample]] = {}
    for labels_path in sorted(examples_dir.glob("*/labels.json")):
        target = labels_path.parent.name
        labels = json.loads(labels_path.read_text())
        examples = []
        for fname in sorted(labels):
            x = read_tensor(labels_path.parent / fname).astype(np.float32)
            examples.append(LabeledExample(x=x, y_true=int(labels[fname])))
        out[target] = examples
    return out


def _cmd_experiment(args) -> int:
    registry = _registry_or_fail(args.registry)
    target_paths = sorted(Path(args.targets).glob("*.tflite"))
    if not target_paths:
        raise ModelProbeError(f"{args.targets}: no .tflite targets found")
    targets = _load_graphs([str(p) for p in target_paths])
    examples = load_examples_dir(args.examples)
    missing = [g.meta.name for g in targets if g.meta.name not in examples]
    if missing:
        raise ModelProbeError(f"no examples for targets: {', '.join(missing)}")
    kinds = list(ALL_KINDS) if args.kinds == "all" else [AttackKind(k) for k in args.kinds.split(",")]

    report = run_experiment(targets, registry,
                            {g.meta.name: examples[g.meta.name] for g in targets},
                            kinds, seed=args.seed, policy=MatchPolicy(args.policy))
    correlation = similarity_success_correlation(report)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_to_json(report) + "\n")
    (out / "report.md").write_text(render_markdown(report))
    scatter = io.StringIO()
    w = csv.writer(scatter)
    w.writerow(["target", "similarity", "targeted_success"])
    for name, sim, success in correlation.pairs:
        w.writerow([name, sim, success])
    (out / "scatter.csv").write_text(scatter.getvalue())
    (out / "run_manifest.json").write_text(
        json.dumps(_manifest(args, [str(p) for p in target_paths]), indent=2) + "\n"
    )
    if args.save_adv:
        _write_adv_artifacts(report, out)

    grand_t, grand_b = report.grand_average("T"), report.grand_average("B")
    print(json.dumps({
        "grand_averages": {"T": grand_t, "B": grand_b},
        "pcc": correlation.pcc,
        "report": str(out / "report.json"),
    }, indent=2))
    return 0


def _write_adv_artifacts(report, out: Path) -> None:
    for name, tr in report.per_target.items():
        for arm, res in tr.arms.items():
            if res.skipped:
                continue
            for kind, cell in res.cells.items():
                cell_dir = out / "adv" / name / arm / kind.value
                cell_dir.mkdir(parents=True, exist_ok=True)
                for idx, x_adv in enumerate(cell.adv_examples):
                    write_tensor(cell_dir / f"{idx:02d}.tnsr", x_adv)


if __name__ == "__main__":
    sys.exit(main())
