"""Relation graph: threshold edges, Louvain communities, exporters."""

from __future__ import annotations

import itertools
import json
from xml.etree import ElementTree as ET

import networkx as nx
import numpy as np
import pytest

from modelprobe.relation import (
    RelationGraph,
    build_graph,
    detect_communities,
    export_graph,
    import_graph_json,
    modularity,
)
from modelprobe.similarity import SimilarityMatrix, SimilarityScore


def score(structural: float, parametric: float | None) -> SimilarityScore:
    return SimilarityScore(structural, parametric, 0, 0, 0, 0)


def matrix(names, cells) -> SimilarityMatrix:
    return SimilarityMatrix(names=list(names), layer_counts=[1] * len(names), scores=dict(cells))


def clique_graph(*cliques: range, bridges: list[tuple[int, int]] = ()) -> RelationGraph:
    n = max(max(c) for c in cliques) + 1
    edges = []
    for c in cliques:
        edges.extend((i, j, 1.0) for i, j in itertools.combinations(c, 2))
    edges.extend((i, j, 1.0) for i, j in bridges)
    return RelationGraph(nodes=[f"n{i}" for i in range(n)], edges=edges)


def brute_force_best_partition(graph: RelationGraph) -> float:
    """Max modularity over every partition (Bell-number search, small n)."""
    n = len(graph.nodes)

    def partitions(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for smaller in partitions(rest):
            for i, block in enumerate(smaller):
                yield smaller[:i] + [block + [first]] + smaller[i + 1 :]
            yield [[first]] + smaller

    best = -1.0
    for part in partitions(list(range(n))):
        labels = [0] * n
        for ci, block in enumerate(part):
            for node in block:
                labels[node] = ci
        best = max(best, modularity(graph, labels))
    return best


class TestBuildGraph:
    def test_empty_matrix_gives_empty_graph(self):
        g = build_graph(matrix(["a"], {}))
        assert g.nodes == ["a"] and g.edges == []

    def test_edge_requires_both_scores_over_threshold(self):
        m = matrix("abc", {
            (0, 1): score(0.9, 0.9),
            (0, 2): score(0.9, 0.5),
            (1, 2): score(0.5, None),
        })
        g = build_graph(m)
        assert g.edges == [(0, 1, 0.9)]

    def test_edge_weight_is_structural(self):
        m = matrix("ab", {(0, 1): score(0.85, 0.99)})
        assert build_graph(m).edges == [(0, 1, 0.85)]

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(11)
        cells = {}
        for i, j in itertools.combinations(range(6), 2):
            s = float(rng.uniform(0.5, 1.0))
            cells[(i, j)] = score(s, s)
        m = matrix("abcdef", cells)
        edges_by_thr = [set((i, j) for i, j, _ in build_graph(m, t).edges)
                        for t in (0.5, 0.7, 0.8, 0.9, 0.99)]
        for lower, higher in zip(edges_by_thr, edges_by_thr[1:]):
            assert higher <= lower

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            build_graph(matrix(["a"], {}), threshold=0.0)
        with pytest.raises(ValueError):
            build_graph(matrix(["a"], {}), threshold=1.5)

    def test_corpus_base_and_derived_form_component(self, graphs):
        from modelprobe.similarity import pairwise_matrix

        names = ["base_alpha", "fe_alpha1", "ft_alpha1", "xl_alpha1"]
        g = build_graph(pairwise_matrix([graphs[n] for n in names]))
        # base connects to every derived model: one connected component
        nxg = nx.Graph()
        nxg.add_nodes_from(range(4))
        nxg.add_edges_from((i, j) for i, j, _ in g.edges)
        assert nx.number_connected_components(nxg) == 1


class TestLouvain:
    def test_single_node(self):
        g = RelationGraph(nodes=["only"], edges=[])
        assert detect_communities(g) == [0]

    def test_no_edges_gives_singletons(self):
        g = RelationGraph(nodes=list("abcd"), edges=[])
        assert detect_communities(g) == [0, 1, 2, 3]

    def test_two_disconnected_triangles(self):
        g = clique_graph(range(0, 3), range(3, 6))
        labels = detect_communities(g)
        assert labels[0] == labels[1] == labels[2]
        assert labels[3] == labels[4] == labels[5]
        assert labels[0] != labels[3]
        # exhaustive oracle: the returned partition achieves the global optimum
        assert modularity(g, labels) == pytest.approx(brute_force_best_partition(g))

    def test_two_ten_cliques_with_bridge(self):
        g = clique_graph(range(0, 10), range(10, 20), bridges=[(9, 10)])
        labels = detect_communities(g, seed=0)
        assert len(set(labels)) == 2
        assert len({labels[i] for i in range(10)}) == 1
        assert len({labels[i] for i in range(10, 20)}) == 1
        # the planted split beats merging everything
        merged = [0] * 20
        assert modularity(g, labels) > modularity(g, merged)

    def test_determinism(self):
        g = clique_graph(range(0, 10), range(10, 20), bridges=[(9, 10)])
        assert detect_communities(g, seed=1) == detect_communities(g, seed=1)
        assert detect_communities(g, seed=1) == detect_communities(g, seed=99)

    def test_partition_totality(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 15))
            edges = [(i, j, float(rng.uniform(0.1, 1)))
                     for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.3]
            g = RelationGraph(nodes=[f"n{i}" for i in range(n)], edges=edges)
            labels = detect_communities(g)
            assert len(labels) == n
            assert all(isinstance(lab, int) for lab in labels)

    def test_modularity_beats_singletons_on_random_graphs(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(3, 20))
            edges = [(i, j, float(rng.uniform(0.2, 1)))
                     for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.25]
            g = RelationGraph(nodes=[f"n{i}" for i in range(n)], edges=edges)
            labels = detect_communities(g)
            singletons = list(range(n))
            assert modularity(g, labels) >= modularity(g, singletons) - 1e-12

    def test_modularity_matches_networkx(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            edges = [(i, j, float(rng.uniform(0.2, 1)))
                     for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.4]
            if not edges:
                continue
            g = RelationGraph(nodes=[f"n{i}" for i in range(n)], edges=edges)
            labels = detect_communities(g)
            nxg = nx.Graph()
            nxg.add_nodes_from(range(n))
            for i, j, w in edges:
                nxg.add_edge(i, j, weight=w)
            blocks = {}
            for node, lab in enumerate(labels):
                blocks.setdefault(lab, set()).add(node)
            expected = nx.community.modularity(nxg, list(blocks.values()), weight="weight")
            assert modularity(g, labels) == pytest.approx(expected, abs=1e-12)


class TestExport:
    def fixture_graph(self) -> RelationGraph:
        g = clique_graph(range(0, 3))
        g.communities = detect_communities(g)
        return g

    def test_empty_graph_all_formats(self):
        g = RelationGraph(nodes=[], edges=[])
        for fmt in ("GEXF", "DOT", "JSON"):
            out = export_graph(g, fmt)
            assert isinstance(out, bytes) and out

    def test_gexf_well_formed_with_community_attribute(self):
        data = export_graph(self.fixture_graph(), "GEXF")
        root = ET.fromstring(data)
        ns = {"g": "http://www.gexf.net/1.2draft"}
        nodes = root.findall(".//g:node", ns)
        edges = root.findall(".//g:edge", ns)
        assert len(nodes) == 3 and len(edges) == 3
        assert all(e.get("weight") is not None for e in edges)
        attvalues = root.findall(".//g:attvalue", ns)
        assert len(attvalues) == 3

    def test_dot_colors_by_community(self):
        g = clique_graph(range(0, 3), range(3, 6))
        g.communities = detect_communities(g)
        text = export_graph(g, "DOT").decode()
        assert text.startswith("graph")
        colors = {line.split('fillcolor="')[1].split('"')[0]
                  for line in text.splitlines() if "fillcolor" in line}
        assert len(colors) == 2

    def test_json_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(1, 10))
            edges = [(i, j, float(rng.uniform(0.8, 1)))
                     for i in range(n) for j in range(i + 1, n) if rng.uniform() < 0.4]
            g = RelationGraph(nodes=[f"n{i}" for i in range(n)], edges=edges)
            g.communities = detect_communities(g)
            back = import_graph_json(export_graph(g, "JSON"))
            assert back == g

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            export_graph(RelationGraph(nodes=[], edges=[]), "YAML")

    def test_json_is_valid_json(self):
        doc = json.loads(export_graph(self.fixture_graph(), "JSON"))
        assert {"nodes", "edges"} <= set(doc)
