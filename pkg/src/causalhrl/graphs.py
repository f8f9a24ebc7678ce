"""Causal graphs over environment variables, graph distances and file formats.

Adjacency convention: ``adjacency[i, j] == 1`` means variable j is a direct
cause (parent) of variable i. JSON ``edges`` entries are ``[i, j]`` pairs in
that same (effect, cause) order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

SID_MAX_NODES = 12


class GraphError(ValueError):
    pass


@dataclass
class CausalGraph:
    adjacency: np.ndarray
    names: list[str] = field(default=None)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.int64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise GraphError("adjacency must be binary")
        a = a.copy()
        np.fill_diagonal(a, 0)
        self.adjacency = a
        if self.names is None:
            self.names = [f"X{i}" for i in range(a.shape[0])]
        if len(self.names) != a.shape[0]:
            raise GraphError("names do not match graph size")

    @classmethod
    def empty(cls, M: int, names=None) -> "CausalGraph":
        return cls(np.zeros((M, M), dtype=np.int64), names)

    @classmethod
    def from_edges(cls, M: int, edges, names=None) -> "CausalGraph":
        """``edges`` as (cause, effect) pairs."""
        a = np.zeros((M, M), dtype=np.int64)
        for cause, effect in edges:
            a[effect, cause] = 1
        return cls(a, names)

    @property
    def M(self) -> int:
        return self.adjacency.shape[0]

    def parents(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def children(self, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.adjacency[:, j])]

    def edges(self) -> list[tuple[int, int]]:
        """(cause, effect) pairs in row-major order of the adjacency."""
        return [(int(j), int(i)) for i, j in zip(*np.nonzero(self.adjacency))]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.M))
        g.add_edges_from(self.edges())
        return g

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())

    def without(self, cause: int, effect: int) -> "CausalGraph":
        a = self.adjacency.copy()
        a[effect, cause] = 0
        return CausalGraph(a, list(self.names))

    def __eq__(self, other):
        return isinstance(other, CausalGraph) and np.array_equal(self.adjacency, other.adjacency)


def shd(a: CausalGraph, b: CausalGraph) -> int:
    """Number of off-diagonal adjacency entries on which the graphs disagree."""
    if a.M != b.M:
        raise GraphError(f"graph sizes differ: {a.M} vs {b.M}")
    diff = a.adjacency != b.adjacency
    np.fill_diagonal(diff, False)
    return int(diff.sum())


def _descendants(g: nx.DiGraph):
    return {v: nx.descendants(g, v) for v in g.nodes}


def sid(truth: CausalGraph, estimate: CausalGraph, max_nodes: int = SID_MAX_NODES) -> int:
    """Structural interventional distance of ``estimate`` w.r.t. ``truth``.

    Counts ordered pairs (i, j), i != j, for which adjusting for the parents
    of i in the estimate does not give the interventional distribution of j
    under do(i) implied by the true graph.
    """
    if truth.M != estimate.M:
        raise GraphError(f"graph sizes differ: {truth.M} vs {estimate.M}")
    if truth.M > max_nodes:
        raise GraphError(f"SID supports at most {max_nodes} nodes, got {truth.M}")
    if not truth.is_acyclic() or not estimate.is_acyclic():
        raise GraphError("SID needs acyclic graphs")
    g = truth.to_networkx()
    desc = _descendants(g)
    count = 0
    for i in range(truth.M):
        z = set(estimate.parents(i))
        for j in range(truth.M):
            if j == i:
                continue
            if j in z:
                # the estimate claims i cannot affect j
                count += j in desc[i]
                continue
            on_causal_path = {w for w in desc[i] if w == j or j in desc[w]}
            forbidden = set(on_causal_path)
            for w in on_causal_path:
                forbidden |= desc[w]
            if z & forbidden:
                count += 1
                continue
            pbd = g.copy()
            pbd.remove_edges_from([(i, w) for w in g.successors(i) if w in on_causal_path])
            if not nx.is_d_separator(pbd, {i}, {j}, z):
                count += 1
    return count


def prune_cycles(graph: CausalGraph, sigma=None) -> CausalGraph:
    """Drop the least confident edge of each cycle until the graph is acyclic.

    Confidence is ``sigma[i, j]`` for edge j -> i (ties broken by edge order);
    without ``sigma`` all edges tie.
    """
    a = graph.adjacency.copy()
    sigma = np.ones(a.shape) if sigma is None else np.asarray(sigma, dtype=float)
    while True:
        g = CausalGraph(a, list(graph.names)).to_networkx()
        try:
            cycle = nx.find_cycle(g)
        except nx.NetworkXNoCycle:
            return CausalGraph(a, list(graph.names))
        cause, effect = min(((u, v) for u, v in cycle), key=lambda e: (sigma[e[1], e[0]], e))
        a[effect, cause] = 0


def graph_to_json(graph: CausalGraph, sigma=None) -> dict:
    out = {
        "M": graph.M,
        "names": list(graph.names),
        "edges": [[int(i), int(j)] for i, j in zip(*np.nonzero(graph.adjacency))],
    }
    if sigma is not None:
        out["sigma_eta"] = np.asarray(sigma, dtype=float).tolist()
    return out


def graph_from_json(obj):
    """Returns (graph, sigma or None)."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    M = int(obj["M"])
    a = np.zeros((M, M), dtype=np.int64)
    for i, j in obj["edges"]:
        a[i, j] = 1
    sigma = obj.get("sigma_eta")
    return CausalGraph(a, list(obj["names"])), (None if sigma is None else np.array(sigma, dtype=float))


def graph_to_dot(graph: CausalGraph, name: str = "causal_graph") -> str:
    """DOT text with cause -> effect arrows; isolated nodes are left out."""
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    linked = sorted({v for e in graph.edges() for v in e})
    for v in linked:
        lines.append(f'  n{v} [label="{graph.names[v]}"];')
    for cause, effect in sorted(graph.edges()):
        lines.append(f"  n{cause} -> n{effect};")
    lines.append("}")
    return "\n".join(lines) + "\n"
