"""Query grounding, TF-IDF topic scoring, k-hop subgraph growth and
linearisation of the subgraph by DFS, BFS or a seeded random walk."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .kg_store import KnowledgeGraph, TripleRecord, build_graph, normalize_label
from .numerics import Rng
from .stopwords import ENGLISH_STOPWORDS

DEFAULT_HOPS = 2
DEFAULT_MAX_TRIPLES = 64
DEFAULT_MAX_TOPICS = 5
DEFAULT_WALK_STEPS = 64

STRATEGIES = ("dfs", "bfs", "random_walk")


@dataclass(frozen=True)
class Query:
    raw: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class TopicSet:
    """Matched entities, highest score first (ties: ascending label)."""

    topics: tuple[tuple[int, float], ...] = ()
    labels: tuple[str, ...] = ()

    @property
    def ids(self) -> list[int]:
        return [eid for eid, _ in self.topics]

    def __len__(self) -> int:
        return len(self.topics)


@dataclass
class SubGraph:
    graph: KnowledgeGraph
    seeds: list[int] = field(default_factory=list)  # ids within ``graph``, topic order
    seed_scores: list[float] = field(default_factory=list)
    hops: int = DEFAULT_HOPS

    @property
    def is_empty(self) -> bool:
        return self.graph.num_entities == 0


@dataclass(frozen=True)
class TraversalItem:
    kind: str  # "entity" | "relation"
    label: str
    source: int  # entity id or triple index
    direction: str = ""  # ">" head->tail, "<" tail->head; relations only

    @property
    def token(self) -> str:
        return self.label + self.direction


@dataclass(frozen=True)
class TraversalSequence:
    items: tuple[TraversalItem, ...]
    strategy: str
    seed: int

    @property
    def tokens(self) -> list[str]:
        return [it.token for it in self.items]

    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.items)


# -- grounding ----------------------------------------------------------------

def _strip_punct(piece: str) -> str:
    start, end = 0, len(piece)
    while start < end and unicodedata.category(piece[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(piece[end - 1]).startswith("P"):
        end -= 1
    return piece[start:end]


def tokenize(text: str) -> Query:
    """Whitespace split, strip edge punctuation, lowercase; empty pieces dropped."""
    tokens = []
    for piece in text.split():
        tok = _strip_punct(piece).lower()
        if tok:
            tokens.append(tok)
    return Query(text, tuple(tokens))


def filter_stopwords(query: Query, stopword_set: Iterable[str] = ENGLISH_STOPWORDS) -> Query:
    stop = stopword_set if isinstance(stopword_set, (set, frozenset)) else set(stopword_set)
    return Query(query.raw, tuple(t for t in query.tokens if t not in stop))


def build_doc_freq(documents: Sequence[str]) -> tuple[dict[str, int], int]:
    """Document frequency of every token, counted once per document."""
    df: Counter[str] = Counter()
    for doc in documents:
        df.update(set(tokenize(doc).tokens))
    return dict(df), len(documents)


def tfidf_score(tf: int, df: int, n_docs: int) -> float:
    idf = math.log((1 + n_docs) / (1 + df))
    return tf * max(idf, 0.0) + 1.0


def get_topics(
    query: Query,
    graph: KnowledgeGraph,
    doc_freq: dict[str, int],
    n_docs: int,
    max_topics: int = DEFAULT_MAX_TOPICS,
) -> TopicSet:
    """Score entities that a query token (or adjacent token pair) names exactly.

    An entity reached by several terms keeps its best score.  A bigram missing
    from ``doc_freq`` takes the smaller document frequency of its two parts.
    """
    toks = [normalize_label(t) for t in query.tokens]
    unigrams = Counter(toks)
    bigrams = Counter(zip(toks, toks[1:]))

    best: dict[int, float] = {}
    for term, tf in unigrams.items():
        eid = graph.label_index.get(term)
        if eid is not None:
            s = tfidf_score(tf, doc_freq.get(term, 0), n_docs)
            best[eid] = max(best.get(eid, s), s)
    for (a, b), tf in bigrams.items():
        term = f"{a}_{b}"
        eid = graph.label_index.get(term)
        if eid is None:
            continue
        if term in doc_freq:
            df = doc_freq[term]
        else:
            df = min(doc_freq.get(a, 0), doc_freq.get(b, 0))
        s = tfidf_score(tf, df, n_docs)
        best[eid] = max(best.get(eid, s), s)

    ranked = sorted(best.items(), key=lambda kv: (-kv[1], graph.label(kv[0])))[:max_topics]
    return TopicSet(tuple(ranked), tuple(graph.label(eid) for eid, _ in ranked))


def get_kg(
    topics: TopicSet,
    graph: KnowledgeGraph,
    hops: int = DEFAULT_HOPS,
    max_triples: int = DEFAULT_MAX_TRIPLES,
) -> SubGraph:
    """Grow a subgraph around the topic seeds by multi-source undirected BFS.

    Triples are ranked by (hop level, score of the seed that reached them,
    triple index) and the first ``max_triples`` are kept.  All seeds stay in
    the subgraph, with or without incident triples.
    """
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if max_triples < 1:
        raise ValueError("max_triples must be >= 1")
    if not topics.topics:
        return SubGraph(build_graph([]), [], [], hops)

    origin = {eid: score for eid, score in topics.topics}
    level = {eid: 0 for eid in origin}
    assigned: dict[int, tuple[int, float]] = {}
    frontier = list(origin)
    for hop in range(1, hops + 1):
        nxt: list[int] = []
        for u in frontier:
            sc = origin[u]
            for ti in graph.incident(u):
                prev = assigned.get(ti)
                if prev is None or (prev[0] == hop and sc > prev[1]):
                    assigned[ti] = (hop, sc)
                tr = graph.triples[ti]
                for v in (tr.head, tr.tail):
                    if v not in level:
                        level[v] = hop
                        origin[v] = sc
                        nxt.append(v)
                    elif level[v] == hop and sc > origin[v]:
                        origin[v] = sc
        frontier = nxt

    kept = sorted(assigned, key=lambda ti: (assigned[ti][0], -assigned[ti][1], ti))[:max_triples]
    records = [
        TripleRecord(graph.label(t.head), t.relation, graph.label(t.tail), t.weight)
        for t in (graph.triples[ti] for ti in kept)
    ]
    seed_labels = list(topics.labels) or [graph.label(eid) for eid in topics.ids]
    sub = build_graph(records, extra_entities=seed_labels)
    seeds = [sub.label_index[lab] for lab in seed_labels]
    return SubGraph(sub, seeds, [s for _, s in topics.topics], hops)


def retrieve(
    text: str,
    graph: KnowledgeGraph,
    doc_freq: dict[str, int],
    n_docs: int,
    hops: int = DEFAULT_HOPS,
    max_triples: int = DEFAULT_MAX_TRIPLES,
    max_topics: int = DEFAULT_MAX_TOPICS,
) -> tuple[TopicSet, SubGraph]:
    """Tokenize, drop stopwords, score topics and grow the subgraph."""
    query = filter_stopwords(tokenize(text))
    topics = get_topics(query, graph, doc_freq, max(n_docs, 1), max_topics)
    return topics, get_kg(topics, graph, hops, max_triples)


# -- serialisation ---------------------------------------------------------------

def _start_node(subgraph: SubGraph, topics: Optional[TopicSet], rng: Rng, start: Optional[str]) -> int:
    g = subgraph.graph
    if start is not None:
        eid = g.label_index.get(normalize_label(start))
        if eid is None:
            raise ValueError(f"start entity {start!r} not in subgraph")
        return eid
    if topics is not None:
        candidates = [g.label_index[lab] for lab in topics.labels if lab in g.label_index]
    else:
        candidates = list(subgraph.seeds)
    if candidates:
        return candidates[rng.randbelow(len(candidates))]
    return 0  # smallest label: ids are label-ordered


def _neighbours(g: KnowledgeGraph) -> list[list[tuple[int, int, str]]]:
    """Per entity: (triple index, other end, marker), ordered by other-end label, relation, index."""
    out: list[list[tuple[int, int, str]]] = []
    for u in range(g.num_entities):
        nb = []
        for ti in g.incident(u):
            tr = g.triples[ti]
            if tr.head == tr.tail:
                continue
            if tr.head == u:
                nb.append((g.label(tr.tail), tr.relation, ti, tr.tail, ">"))
            else:
                nb.append((g.label(tr.head), tr.relation, ti, tr.head, "<"))
        nb.sort()
        out.append([(ti, v, mk) for _, _, ti, v, mk in nb])
    return out


def _entity(g: KnowledgeGraph, eid: int) -> TraversalItem:
    return TraversalItem("entity", g.label(eid), eid)


def _relation(g: KnowledgeGraph, ti: int, marker: str) -> TraversalItem:
    return TraversalItem("relation", g.triples[ti].relation, ti, marker)


def serialize_dfs(
    subgraph: SubGraph,
    rng_seed: int = 0,
    topics: Optional[TopicSet] = None,
    start: Optional[str] = None,
) -> TraversalSequence:
    """Depth-first linearisation from a seeded random topic seed.

    Unreached components are appended, each restarted at its smallest-label entity.
    """
    g = subgraph.graph
    if g.num_entities == 0:
        return TraversalSequence((), "dfs", rng_seed)
    nbrs = _neighbours(g)
    root0 = _start_node(subgraph, topics, Rng(rng_seed), start)
    visited: set[int] = set()
    items: list[TraversalItem] = []

    def run(root: int) -> None:
        visited.add(root)
        items.append(_entity(g, root))
        stack = [(root, iter(nbrs[root]))]
        while stack:
            _, it = stack[-1]
            for ti, v, mk in it:
                if v not in visited:
                    visited.add(v)
                    items.append(_relation(g, ti, mk))
                    items.append(_entity(g, v))
                    stack.append((v, iter(nbrs[v])))
                    break
            else:
                stack.pop()

    run(root0)
    for eid in range(g.num_entities):
        if eid not in visited:
            run(eid)
    return TraversalSequence(tuple(items), "dfs", rng_seed)


def serialize_bfs(
    subgraph: SubGraph,
    rng_seed: int = 0,
    topics: Optional[TopicSet] = None,
    start: Optional[str] = None,
) -> TraversalSequence:
    g = subgraph.graph
    if g.num_entities == 0:
        return TraversalSequence((), "bfs", rng_seed)
    nbrs = _neighbours(g)
    root0 = _start_node(subgraph, topics, Rng(rng_seed), start)
    visited: set[int] = set()
    items: list[TraversalItem] = []

    def run(root: int) -> None:
        visited.add(root)
        items.append(_entity(g, root))
        queue = [root]
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            for ti, v, mk in nbrs[u]:
                if v not in visited:
                    visited.add(v)
                    items.append(_relation(g, ti, mk))
                    items.append(_entity(g, v))
                    queue.append(v)

    run(root0)
    for eid in range(g.num_entities):
        if eid not in visited:
            run(eid)
    return TraversalSequence(tuple(items), "bfs", rng_seed)


def serialize_random_walk(
    subgraph: SubGraph,
    rng_seed: int = 0,
    topics: Optional[TopicSet] = None,
    max_steps: int = DEFAULT_WALK_STEPS,
    start: Optional[str] = None,
) -> TraversalSequence:
    """Seeded walk choosing a uniformly random incident triple at each step.

    Entities are emitted on first visit and relations on the first traversal
    of their triple, so no item repeats.  Stops after ``max_steps`` moves or
    at a node with no incident triples.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    g = subgraph.graph
    if g.num_entities == 0:
        return TraversalSequence((), "random_walk", rng_seed)
    rng = Rng(rng_seed)
    cur = _start_node(subgraph, topics, rng, start)
    items = [_entity(g, cur)]
    seen_e = {cur}
    seen_t: set[int] = set()
    for _ in range(max_steps):
        incident = g.incident(cur)
        if not incident:
            break
        ti = incident[rng.randbelow(len(incident))]
        tr = g.triples[ti]
        if tr.head == cur:
            nxt, mk = tr.tail, ">"
        else:
            nxt, mk = tr.head, "<"
        if ti not in seen_t:
            seen_t.add(ti)
            items.append(_relation(g, ti, mk))
        if nxt not in seen_e:
            seen_e.add(nxt)
            items.append(_entity(g, nxt))
        cur = nxt
    return TraversalSequence(tuple(items), "random_walk", rng_seed)


def serialize(
    subgraph: SubGraph,
    strategy: str = "dfs",
    rng_seed: int = 0,
    topics: Optional[TopicSet] = None,
    max_steps: int = DEFAULT_WALK_STEPS,
) -> TraversalSequence:
    if strategy == "dfs":
        return serialize_dfs(subgraph, rng_seed, topics)
    if strategy == "bfs":
        return serialize_bfs(subgraph, rng_seed, topics)
    if strategy == "random_walk":
        return serialize_random_walk(subgraph, rng_seed, topics, max_steps)
    raise ValueError(f"unknown traversal strategy {strategy!r}; expected one of {STRATEGIES}")
