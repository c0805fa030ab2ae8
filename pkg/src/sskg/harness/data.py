"""QA datasets in a single JSONL schema and the frozen prompt template.

Each line: ``{"id": str, "question": str, "choices": [{"label": "A", "text": ...}, ...], "answer": str}``.
``choices`` may also be ``[["A", "text"], ...]`` and is omitted for open QA.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..retrieval import tokenize

SCHEMAS = ("multiple_choice", "open_qa")


class SchemaError(ValueError):
    def __init__(self, message: str, lineno: int) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    answer: str
    choices: Optional[tuple[tuple[str, str], ...]] = None

    def __post_init__(self) -> None:
        if self.choices is not None and self.answer not in {lab for lab, _ in self.choices}:
            raise ValueError(f"answer {self.answer!r} is not one of the choice labels")

    @property
    def is_multiple_choice(self) -> bool:
        return self.choices is not None

    def to_json(self) -> dict:
        doc = {"id": self.id, "question": self.question, "answer": self.answer}
        if self.choices is not None:
            doc["choices"] = [{"label": lab, "text": txt} for lab, txt in self.choices]
        return doc


def _parse_choices(raw, lineno: int) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list) or not raw:
        raise SchemaError("'choices' must be a nonempty list", lineno)
    out = []
    for c in raw:
        if isinstance(c, dict) and isinstance(c.get("label"), str) and isinstance(c.get("text"), str):
            out.append((c["label"], c["text"]))
        elif isinstance(c, (list, tuple)) and len(c) == 2 and all(isinstance(x, str) for x in c):
            out.append((c[0], c[1]))
        else:
            raise SchemaError(f"malformed choice {c!r}", lineno)
    labels = [lab for lab, _ in out]
    if len(set(labels)) != len(labels):
        raise SchemaError("duplicate choice labels", lineno)
    return tuple(out)


def parse_example(doc, schema: str, lineno: int = 1) -> QaExample:
    if not isinstance(doc, dict):
        raise SchemaError("each line must be a JSON object", lineno)
    for key in ("id", "question", "answer"):
        if not isinstance(doc.get(key), str):
            raise SchemaError(f"field {key!r} must be a string", lineno)
    choices = None
    if schema == "multiple_choice":
        if "choices" not in doc:
            raise SchemaError("multiple-choice example lacks 'choices'", lineno)
        choices = _parse_choices(doc["choices"], lineno)
        if doc["answer"] not in {lab for lab, _ in choices}:
            raise SchemaError(f"answer {doc['answer']!r} does not name a choice", lineno)
    elif schema == "open_qa":
        if doc.get("choices"):
            raise SchemaError("open-QA example must not carry choices", lineno)
    else:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    return QaExample(doc["id"], doc["question"], doc["answer"], choices)


def load_jsonl(path: str | Path, schema: str) -> list[QaExample]:
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError as exc:
                raise SchemaError(f"invalid JSON: {exc}", lineno) from None
            out.append(parse_example(doc, schema, lineno))
    return out


def write_jsonl(path: str | Path, examples) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json()) + "\n")


def prompt_text(example: QaExample) -> str:
    """``question: <q> choices: (A) <a> (B) <b> ... answer:``; open QA drops the choices block."""
    parts = [f"question: {example.question}"]
    if example.choices:
        parts.append("choices: " + " ".join(f"({lab}) {txt}" for lab, txt in example.choices))
    parts.append("answer:")
    return " ".join(parts)


def render_prompt(example: QaExample) -> list[str]:
    return list(tokenize(prompt_text(example)).tokens)


def answer_tokens(example: QaExample) -> list[str]:
    return list(tokenize(example.answer).tokens)


def retrieval_text(example: QaExample) -> str:
    """Text grounded against the graph: the question plus any choice texts."""
    if not example.choices:
        return example.question
    return example.question + " " + " ".join(txt for _, txt in example.choices)
