"""Exact-match accuracy, ROUGE-N and BLEU over harness tokens."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from ..retrieval import tokenize


def _tokens(text: str) -> list[str]:
    return list(tokenize(text).tokens)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def exact_match_acc(predictions: Sequence[str], golds: Sequence[str]) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        return 0.0
    hits = sum(p.strip() == g.strip() for p, g in zip(predictions, golds))
    return hits / len(golds)


def rouge_n(candidate: str, reference: str, n: int = 1) -> dict[str, float]:
    """Clipped n-gram overlap; precision over candidate n-grams, recall over reference n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(_tokens(candidate), n)
    ref = _ngrams(_tokens(reference), n)
    overlap = sum((cand & ref).values())
    c_total, r_total = sum(cand.values()), sum(ref.values())
    p = overlap / c_total if c_total else 0.0
    r = overlap / r_total if r_total else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f1}


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with multi-reference clipping and no smoothing.

    Any zero n-gram precision yields 0.  Orders longer than the candidate
    are left out of the geometric mean, so identical short texts score 1.
    The brevity penalty uses the reference length closest to the candidate
    (shorter wins ties).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    cand = _tokens(candidate)
    if not cand:
        return 0.0
    refs = [_tokens(r) for r in references]
    if not refs:
        return 0.0
    order = min(max_n, len(cand))
    log_sum = 0.0
    for n in range(1, order + 1):
        c = _ngrams(cand, n)
        total = sum(c.values())
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= _ngrams(r, n)
        clipped = sum((c & max_ref).values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    bp = 1.0 if len(cand) >= ref_len else math.exp(1 - ref_len / len(cand))
    return bp * math.exp(log_sum / order)
