"""A small commonsense graph with eight questions grounded in it.

Used by the overfit check, the CLI ``demo`` data and the test-suite.
"""

from __future__ import annotations

from ..kg_store import KnowledgeGraph, TripleRecord, build_graph
from .data import QaExample

TOY_TRIPLES = [
    ("cat", "IsA", "animal"),
    ("cat", "Desires", "fish"),
    ("cat", "AtLocation", "house"),
    ("dog", "IsA", "animal"),
    ("dog", "Desires", "bone"),
    ("dog", "CapableOf", "bark"),
    ("bird", "IsA", "animal"),
    ("bird", "CapableOf", "fly"),
    ("bird", "AtLocation", "tree"),
    ("cow", "IsA", "animal"),
    ("cow", "AtLocation", "farm"),
    ("cow", "Desires", "grass"),
    ("bee", "CapableOf", "sting"),
    ("bee", "Makes", "honey"),
    ("honey", "IsA", "food"),
    ("fish", "AtLocation", "water"),
    ("hammer", "UsedFor", "hitting nails"),
    ("hammer", "IsA", "tool"),
    ("tree", "HasA", "leaf"),
    ("ice cream", "IsA", "food"),
]

TOY_QA = [
    ("q1", "What does a cat desire?", "fish"),
    ("q2", "What does a dog desire?", "bone"),
    ("q3", "Where does a bird sit?", "tree"),
    ("q4", "What can a dog do?", "bark"),
    ("q5", "What can a bird do?", "fly"),
    ("q6", "Where does a cow live?", "farm"),
    ("q7", "What does a bee make?", "honey"),
    ("q8", "What is a hammer used for?", "hitting nails"),
]


def toy_graph() -> KnowledgeGraph:
    return build_graph(TripleRecord(h, r, t) for h, r, t in TOY_TRIPLES)


def toy_dataset() -> list[QaExample]:
    return [QaExample(i, q, a) for i, q, a in TOY_QA]


def toy_tsv() -> str:
    return "".join(f"{h}\t{r}\t{t}\n" for h, r, t in TOY_TRIPLES)
