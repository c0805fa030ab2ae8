"""Levi-graph view of a subgraph and its signed, clamped relative position matrix."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .retrieval import SubGraph, TraversalSequence

DEFAULT_WINDOW = 8


class LeviOrderError(ValueError):
    pass


@dataclass(frozen=True)
class LeviNode:
    kind: str  # "entity" | "relation"
    label: str
    origin: int  # entity id or triple index in the source subgraph


@dataclass
class LeviGraph:
    nodes: list[LeviNode]
    edges: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class PositionMatrix:
    values: np.ndarray  # (n, n) int64
    k: int

    @property
    def sentinel(self) -> int:
        return self.k + 1

    @property
    def n(self) -> int:
        return self.values.shape[0]


def to_levi(subgraph: SubGraph, order: TraversalSequence) -> LeviGraph:
    """One node per entity and per triple; each triple (h, r, t) gives edges h->v_r->t.

    Nodes follow their first appearance in ``order``; nodes the traversal never
    reached come after, sorted by label.
    """
    g = subgraph.graph
    ent_node: dict[int, int] = {}
    rel_node: dict[int, int] = {}
    nodes: list[LeviNode] = []

    for item in order.items:
        if item.kind == "entity":
            if not 0 <= item.source < g.num_entities or g.label(item.source) != item.label:
                raise LeviOrderError(f"entity item {item.label!r} does not belong to this subgraph")
            if item.source not in ent_node:
                ent_node[item.source] = len(nodes)
                nodes.append(LeviNode("entity", item.label, item.source))
        elif item.kind == "relation":
            if not 0 <= item.source < g.num_triples or g.triples[item.source].relation != item.label:
                raise LeviOrderError(f"relation item {item.label!r} does not belong to this subgraph")
            if item.source not in rel_node:
                rel_node[item.source] = len(nodes)
                nodes.append(LeviNode("relation", item.label, item.source))
        else:
            raise LeviOrderError(f"unknown item kind {item.kind!r}")

    rest = [LeviNode("entity", e.label, e.id) for e in g.entities if e.id not in ent_node]
    rest += [LeviNode("relation", t.relation, i) for i, t in enumerate(g.triples) if i not in rel_node]
    rest.sort(key=lambda nd: (nd.label, nd.kind, nd.origin))
    for nd in rest:
        (ent_node if nd.kind == "entity" else rel_node)[nd.origin] = len(nodes)
        nodes.append(nd)

    edges: list[tuple[int, int]] = []
    for ti, tr in enumerate(g.triples):
        v = rel_node[ti]
        edges.append((ent_node[tr.head], v))
        edges.append((v, ent_node[tr.tail]))
    return LeviGraph(nodes, edges)


def _bfs_all(n: int, adj: list[list[int]]) -> np.ndarray:
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    q.append(v)
    return dist


def position_matrix(levi: LeviGraph, k: int = DEFAULT_WINDOW) -> PositionMatrix:
    """Signed relative distances between Levi nodes.

    Magnitude is the undirected hop distance clamped to ``k``.  The sign is
    positive when a directed shortest path runs i->j but not j->i, negative in
    the reverse case; when both or neither direction exists the sign follows
    index order (positive above the diagonal).  Disconnected pairs get
    +/-(k+1) by the same index rule.  The result is exactly antisymmetric.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(levi.nodes)
    und: list[list[int]] = [[] for _ in range(n)]
    fwd: list[list[int]] = [[] for _ in range(n)]
    for a, b in levi.edges:
        fwd[a].append(b)
        und[a].append(b)
        und[b].append(a)
    d = _bfs_all(n, und)
    dd = _bfs_all(n, fwd)

    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    forward = dd == d
    backward = dd.T == d
    sign = np.where(forward & ~backward, 1, np.where(backward & ~forward, -1, np.where(upper, 1, -1)))
    mag = np.where(d < 0, k + 1, np.minimum(d, k))
    vals = (sign * mag).astype(np.int64)
    np.fill_diagonal(vals, 0)
    return PositionMatrix(vals, k)


def serialize_levi(levi: LeviGraph) -> list[str]:
    return [nd.label for nd in levi.nodes]
