"""Model relation graph: threshold edges, Louvain communities, exports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET
from xml.sax.saxutils import quoteattr

from .similarity import SimilarityMatrix

DEFAULT_THRESHOLD = 0.8

# Gephi-style categorical palette for DOT community coloring
_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


@dataclass
class RelationGraph:
    nodes: list[str]  # labels: app/model name + extraction order
    edges: list[tuple[int, int, float]]  # (i, j, structural weight), i < j
    communities: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.communities:
            self.communities = list(range(len(self.nodes)))

    def neighbors(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {i: {} for i in range(len(self.nodes))}
        for i, j, w in self.edges:
            adj[i][j] = adj[i].get(j, 0.0) + w
            adj[j][i] = adj[j].get(i, 0.0) + w
        return adj


def build_graph(matrix: SimilarityMatrix, threshold: float = DEFAULT_THRESHOLD) -> RelationGraph:
    """Edge (i, j) iff structural >= threshold and parametric present and >= threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    edges = []
    for (i, j), score in sorted(matrix.scores.items()):
        if score.structural >= threshold and score.parametric is not None and score.parametric >= threshold:
            edges.append((i, j, score.structural))
    return RelationGraph(nodes=list(matrix.names), edges=edges)


def modularity(graph: RelationGraph, partition: list[int]) -> float:
    """Weighted Newman modularity of a node → community assignment."""
    two_m = sum(2.0 * w for _, _, w in graph.edges)
    if two_m == 0.0:
        return 0.0
    degree = [0.0] * len(graph.nodes)
    for i, j, w in graph.edges:
        degree[i] += w
        degree[j] += w
    q = 0.0
    for i, j, w in graph.edges:
        if partition[i] == partition[j]:
            q += 2.0 * w / two_m
    for c in set(partition):
        d = sum(degree[i] for i in range(len(graph.nodes)) if partition[i] == c)
        q -= (d / two_m) ** 2
    return q


def detect_communities(graph: RelationGraph, seed: int = 0) -> list[int]:
    """Louvain partition at resolution 1.0.

    Deterministic by construction: nodes are visited in ascending id order and
    equal-gain moves prefer the lower community id, so the seed never has to
    break a tie. Returned labels are compacted to 0..k-1 in order of first
    appearance.
    """
    del seed  # accepted for interface stability; the sweep is deterministic
    n = len(graph.nodes)
    if n == 0:
        return []

    # current coarse graph: adjacency with weights, self-loops allowed
    adj = {i: dict(nbrs) for i, nbrs in graph.neighbors().items()}
    self_loops = {i: 0.0 for i in range(n)}
    membership = list(range(n))  # original node -> current coarse node

    improved = True
    while improved:
        partition, improved = _local_moves(adj, self_loops)
        if improved:
            adj, self_loops, remap = _aggregate(adj, self_loops, partition)
            membership = [remap[partition[c]] for c in membership]

    return _compact([membership[i] for i in range(n)])


def _local_moves(adj: dict[int, dict[int, float]], self_loops: dict[int, float]):
    nodes = sorted(adj)
    two_m = sum(sum(nbrs.values()) for nbrs in adj.values()) + 2.0 * sum(self_loops.values())
    if two_m == 0.0:
        return {u: u for u in nodes}, False

    community = {u: u for u in nodes}
    degree = {u: sum(adj[u].values()) + 2.0 * self_loops[u] for u in nodes}
    comm_total = dict(degree)

    moved_any = False
    changed = True
    while changed:
        changed = False
        for u in nodes:
            cu = community[u]
            weight_to = {}
            for v, w in adj[u].items():
                weight_to[community[v]] = weight_to.get(community[v], 0.0) + w
            comm_total[cu] -= degree[u]
            base = weight_to.get(cu, 0.0) - comm_total[cu] * degree[u] / two_m
            # ascending community order + strict improvement = lower id wins ties
            best_c, best_gain = cu, 0.0
            for c in sorted(weight_to):
                if c == cu:
                    continue
                gain = (weight_to[c] - comm_total[c] * degree[u] / two_m) - base
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            community[u] = best_c
            comm_total[best_c] += degree[u]
            if best_c != cu:
                changed = True
                moved_any = True
    return community, moved_any


def _aggregate(adj, self_loops, partition):
    comms = sorted(set(partition.values()))
    remap = {c: i for i, c in enumerate(comms)}
    new_adj: dict[int, dict[int, float]] = {i: {} for i in range(len(comms))}
    new_loops = {i: 0.0 for i in range(len(comms))}
    for u, nbrs in adj.items():
        cu = remap[partition[u]]
        new_loops[cu] += self_loops[u]
        for v, w in nbrs.items():
            cv = remap[partition[v]]
            if cu == cv:
                if u < v:
                    new_loops[cu] += w
            else:
                new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
    return new_adj, new_loops, remap


def _compact(labels: list[int]) -> list[int]:
    remap: dict[int, int] = {}
    out = []
    for lab in labels:
        if lab not in remap:
            remap[lab] = len(remap)
        out.append(remap[lab])
    return out


# -- serialization -----------------------------------------------------------


def export_graph(graph: RelationGraph, fmt: str) -> bytes:
    fmt = fmt.upper()
    if fmt == "GEXF":
        return _to_gexf(graph)
    if fmt == "DOT":
        return _to_dot(graph)
    if fmt == "JSON":
        return _to_json(graph)
    raise ValueError(f"unknown graph format {fmt!r}")


def _to_gexf(graph: RelationGraph) -> bytes:
    root = ET.Element("gexf", xmlns="http://www.gexf.net/1.2draft", version="1.2")
    g = ET.SubElement(root, "graph", defaultedgetype="undirected")
    attrs = ET.SubElement(g, "attributes", {"class": "node"})
    ET.SubElement(attrs, "attribute", id="0", title="community", type="integer")
    nodes = ET.SubElement(g, "nodes")
    for i, label in enumerate(graph.nodes):
        node = ET.SubElement(nodes, "node", id=str(i), label=label)
        values = ET.SubElement(node, "attvalues")
        ET.SubElement(values, "attvalue", {"for": "0", "value": str(graph.communities[i])})
    edges = ET.SubElement(g, "edges")
    for k, (i, j, w) in enumerate(graph.edges):
        ET.SubElement(edges, "edge", id=str(k), source=str(i), target=str(j), weight=repr(w))
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def _to_dot(graph: RelationGraph) -> bytes:
    lines = ["graph models {"]
    for i, label in enumerate(graph.nodes):
        color = _PALETTE[graph.communities[i] % len(_PALETTE)]
        lines.append(
            f'  n{i} [label={quoteattr(label)} style=filled fillcolor="{color}" community={graph.communities[i]}];'
        )
    for i, j, w in graph.edges:
        lines.append(f'  n{i} -- n{j} [weight={w!r} penwidth={1.0 + 4.0 * w!r}];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _to_json(graph: RelationGraph) -> bytes:
    doc = {
        "nodes": [
            {"id": i, "label": label, "community": graph.communities[i]}
            for i, label in enumerate(graph.nodes)
        ],
        "edges": [{"source": i, "target": j, "weight": w} for i, j, w in graph.edges],
    }
    return json.dumps(doc, indent=2).encode("utf-8")


def import_graph_json(data: bytes) -> RelationGraph:
    doc = json.loads(data.decode("utf-8"))
    nodes = sorted(doc["nodes"], key=lambda n: n["id"])
    return RelationGraph(
        nodes=[n["label"] for n in nodes],
        edges=[(e["source"], e["target"], e["weight"]) for e in doc["edges"]],
        communities=[n["community"] for n in nodes],
    )
