"""Triple store: ingestion from local dumps, an optional ConceptNet REST client,
and exact-match entity lookup.

Graphs are canonical: entity ids follow ascending normalized label and
triples are sorted by ``(head label, relation, tail label)``, so the same set
of assertions always produces the same graph regardless of input order.
"""

from __future__ import annotations

import gzip
import json
import logging
import re
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    """Lowercase and collapse internal whitespace runs to single underscores."""
    return _WS.sub("_", text.strip()).lower()


def normalize_relation(text: str) -> str:
    # relations keep their case (IsA, CapableOf); only whitespace is folded
    return _WS.sub("_", text.strip())


class KGFormatError(ValueError):
    """A malformed input line; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int, path: str | None = None) -> None:
        where = f"{path}:{lineno}" if path else f"line {lineno}"
        super().__init__(f"{where}: {message}")
        self.lineno = lineno
        self.path = path


class RemoteKGError(RuntimeError):
    pass


class RemoteNetworkError(RemoteKGError):
    pass


class RemoteStatusError(RemoteKGError):
    def __init__(self, status: int, url: str) -> None:
        super().__init__(f"HTTP {status} from {url}")
        self.status = status


class RemotePayloadError(RemoteKGError):
    pass


@dataclass(frozen=True)
class Entity:
    id: int
    label: str
    surface_forms: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Triple:
    head: int
    relation: str
    tail: int
    weight: float = 1.0


@dataclass(frozen=True)
class TripleRecord:
    """A triple expressed by labels, before it belongs to any graph."""

    head: str
    relation: str
    tail: str
    weight: float = 1.0


@dataclass
class KnowledgeGraph:
    entities: list[Entity] = field(default_factory=list)
    triples: list[Triple] = field(default_factory=list)
    out_index: dict[int, list[int]] = field(default_factory=dict)
    in_index: dict[int, list[int]] = field(default_factory=dict)
    label_index: dict[str, int] = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def label(self, entity_id: int) -> str:
        return self.entities[entity_id].label

    def incident(self, entity_id: int) -> list[int]:
        """Triple indices touching ``entity_id`` in either direction, ascending, no repeats."""
        seen = set(self.out_index.get(entity_id, ()))
        seen.update(self.in_index.get(entity_id, ()))
        return sorted(seen)

    def records(self) -> list[TripleRecord]:
        return [
            TripleRecord(self.label(t.head), t.relation, self.label(t.tail), t.weight)
            for t in self.triples
        ]

    def triple_set(self) -> set[tuple[str, str, str, float]]:
        return {(r.head, r.relation, r.tail, r.weight) for r in self.records()}

    def all_labels(self) -> list[str]:
        """Entity labels and relation labels, sorted and deduplicated."""
        return sorted({e.label for e in self.entities} | {t.relation for t in self.triples})

    def to_json(self) -> dict:
        return {
            "entities": [e.label for e in self.entities],
            "triples": [[r.head, r.relation, r.tail, r.weight] for r in self.records()],
        }


def build_graph(records: Iterable[TripleRecord], extra_entities: Iterable[str] = ()) -> KnowledgeGraph:
    """Assemble a canonical graph from label-level records.

    Duplicate ``(head, relation, tail)`` assertions keep the maximum weight.
    ``extra_entities`` become entities even without incident triples.
    """
    surfaces: dict[str, set[str]] = {}
    best: dict[tuple[str, str, str], float] = {}

    def note(raw: str) -> str:
        lab = normalize_label(raw)
        surfaces.setdefault(lab, set()).add(raw)
        return lab

    for rec in records:
        h, t = note(rec.head), note(rec.tail)
        key = (h, normalize_relation(rec.relation), t)
        w = float(rec.weight)
        if key not in best or w > best[key]:
            best[key] = w
    for raw in extra_entities:
        note(raw)

    labels = sorted(surfaces)
    label_index = {lab: i for i, lab in enumerate(labels)}
    entities = [Entity(i, lab, frozenset(surfaces[lab])) for i, lab in enumerate(labels)]
    triples = [
        Triple(label_index[h], r, label_index[t], best[(h, r, t)]) for (h, r, t) in sorted(best)
    ]
    out_index: dict[int, list[int]] = {e.id: [] for e in entities}
    in_index: dict[int, list[int]] = {e.id: [] for e in entities}
    for i, tr in enumerate(triples):
        out_index[tr.head].append(i)
        in_index[tr.tail].append(i)
    return KnowledgeGraph(entities, triples, out_index, in_index, label_index)


def merge(graph: KnowledgeGraph, records: Iterable[TripleRecord]) -> KnowledgeGraph:
    """New graph holding ``graph``'s triples plus ``records``; ``graph`` is untouched."""
    return build_graph(
        list(graph.records()) + list(records),
        extra_entities=[e.label for e in graph.entities],
    )


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return path.open("r", encoding="utf-8")


def ingest_simple_tsv(path: str | Path) -> KnowledgeGraph:
    """Read ``head<TAB>relation<TAB>tail[<TAB>weight]`` lines; ``#`` starts a comment line."""
    path = Path(path)
    records = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise KGFormatError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", lineno, str(path))
            head, rel, tail = (f.strip() for f in fields[:3])
            if not head or not rel or not tail:
                raise KGFormatError("empty head, relation or tail", lineno, str(path))
            weight = 1.0
            if len(fields) == 4:
                try:
                    weight = float(fields[3])
                except ValueError:
                    raise KGFormatError(f"unparseable weight {fields[3]!r}", lineno, str(path)) from None
                if not weight >= 0.0 or weight == float("inf"):
                    raise KGFormatError(f"weight must be finite and nonnegative, got {fields[3]!r}", lineno, str(path))
            records.append(TripleRecord(head, rel, tail, weight))
    return build_graph(records)


def _concept_label(uri: str, lang: str) -> Optional[str]:
    prefix = f"/c/{lang}/"
    if not uri.startswith(prefix):
        return None
    term = uri[len(prefix):].split("/", 1)[0]
    return term or None


def ingest_conceptnet_dump(path: str | Path, language_filter: str = "en") -> KnowledgeGraph:
    """Read the 5-column ConceptNet assertion dump (optionally gzipped).

    Rows whose start or end concept is outside ``/c/<language_filter>/`` are
    dropped.  Unparseable metadata is tolerated and yields weight 1.0.
    """
    path = Path(path)
    records = []
    skipped = 0
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < 5:
                raise KGFormatError(f"expected 5 tab-separated columns, got {len(cols)}", lineno, str(path))
            _, rel_uri, start_uri, end_uri, meta = cols[:5]
            head = _concept_label(start_uri, language_filter)
            tail = _concept_label(end_uri, language_filter)
            if head is None or tail is None:
                skipped += 1
                continue
            relation = rel_uri.rstrip("/").rsplit("/", 1)[-1]
            weight = 1.0
            try:
                w = json.loads(meta).get("weight", 1.0)
                weight = float(w) if w is not None and float(w) >= 0 else 1.0
            except (ValueError, TypeError, AttributeError):
                logger.debug("%s:%d: unparseable metadata, using weight 1.0", path, lineno)
            records.append(TripleRecord(head, relation, tail, weight))
    if skipped:
        logger.info("%s: skipped %d rows outside /c/%s/", path, skipped, language_filter)
    return build_graph(records)


def lookup_entity(graph: KnowledgeGraph, label: str) -> Optional[int]:
    return graph.label_index.get(normalize_label(label))


def _parse_edge(edge) -> TripleRecord:
    try:
        head = edge["start"]["label"]
        rel = edge["rel"]["label"]
        tail = edge["end"]["label"]
        weight = float(edge.get("weight", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise RemotePayloadError(f"malformed edge: {exc!r}") from None
    if not all(isinstance(x, str) and x.strip() for x in (head, rel, tail)):
        raise RemotePayloadError("edge labels must be nonempty strings")
    return TripleRecord(normalize_label(head), normalize_relation(rel), normalize_label(tail), weight)


def parse_edges_payload(body: bytes | str, limit: int) -> list[TripleRecord]:
    """Parse a ConceptNet REST response body; any malformed part fails the whole call."""
    try:
        payload = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise RemotePayloadError(f"response is not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or not isinstance(payload.get("edges"), list):
        raise RemotePayloadError("response lacks an 'edges' array")
    return [_parse_edge(e) for e in payload["edges"][:limit]]


def fetch_remote_edges(
    entity_label: str,
    endpoint_url: str,
    limit: int = 50,
    language: str = "en",
    timeout: float = 10.0,
) -> list[TripleRecord]:
    """``GET <endpoint>/c/<lang>/<term>?limit=N`` and parse at most ``limit`` edges.

    Never touches a local graph; merge the result with :func:`merge`.
    """
    if limit < 1:
        raise ValueError("limit must be positive")
    term = urllib.parse.quote(normalize_label(entity_label))
    url = f"{endpoint_url.rstrip('/')}/c/{language}/{term}?limit={limit}"
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            status = resp.status
            body = resp.read()
    except urllib.error.HTTPError as exc:
        raise RemoteStatusError(exc.code, url) from None
    except (urllib.error.URLError, OSError) as exc:
        raise RemoteNetworkError(f"request to {url} failed: {exc}") from exc
    if not 200 <= status < 300:
        raise RemoteStatusError(status, url)
    return parse_edges_payload(body, limit)
