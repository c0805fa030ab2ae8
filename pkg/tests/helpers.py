"""Seeded random subgraphs shared by the property tests."""

from sskg.kg_store import TripleRecord, build_graph
from sskg.numerics import Rng
from sskg.retrieval import SubGraph

RELATIONS = ("IsA", "AtLocation", "CapableOf", "Desires", "r")


def random_subgraph(seed, max_entities=12, max_triples=20, connected=False):
    rng = Rng(seed)
    n = 1 + rng.randbelow(max_entities)
    labels = [f"e{i:02d}" for i in range(n)]
    records = []
    if connected:
        # random spanning tree first, so every entity is reachable
        for i in range(1, n):
            j = rng.randbelow(i)
            h, t = (labels[i], labels[j]) if rng.random() < 0.5 else (labels[j], labels[i])
            records.append(TripleRecord(h, rng.choice(RELATIONS), t))
    budget = max(0, rng.randbelow(max_triples + 1) - len(records))
    for _ in range(budget):
        records.append(TripleRecord(rng.choice(labels), rng.choice(RELATIONS), rng.choice(labels)))
    g = build_graph(records, extra_entities=labels)
    seeds = sorted({g.label_index[rng.choice(labels)] for _ in range(1 + rng.randbelow(3))})
    return SubGraph(g, seeds, [1.0] * len(seeds), 2)
