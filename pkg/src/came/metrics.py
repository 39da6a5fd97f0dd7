"""Ranking metrics and rank-biased overlap.

All metrics macro-average over the evaluated query set only; queries without
usable judgments are excluded with a warning (mirroring trec-eval behavior).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .data import RankedList


class EvalWarning(UserWarning):
    pass


@dataclass
class MetricReport:
    name: str
    cutoff: int
    per_query: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return sum(self.per_query.values()) / len(self.per_query)

    def __str__(self):
        return f"{self.name}@{self.cutoff}={self.mean:.4f} over {len(self.per_query)} queries"


def _relevant_set(qrels: dict[str, dict[str, int]], qid: str) -> set[str]:
    return {d for d, r in qrels.get(qid, {}).items() if r > 0}


def mrr_at_k(run: dict[str, RankedList], qrels: dict, k: int = 10) -> MetricReport:
    """Reciprocal rank of the first relevant document within the top k."""
    report = MetricReport("mrr", k)
    for qid, rl in run.items():
        if qid not in qrels:
            warnings.warn(f"query {qid!r} missing from qrels; excluded", EvalWarning,
                          stacklevel=2)
            continue
        rel = _relevant_set(qrels, qid)
        value = 0.0
        for rank, doc_id in enumerate(rl.doc_ids()[:k], start=1):
            if doc_id in rel:
                value = 1.0 / rank
                break
        report.per_query[qid] = value
    return report


def recall_at_k(run: dict[str, RankedList], qrels: dict, k: int) -> MetricReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    report = MetricReport("recall", k)
    for qid, rl in run.items():
        rel = _relevant_set(qrels, qid)
        if not rel:
            warnings.warn(f"query {qid!r} has no relevant documents; excluded",
                          EvalWarning, stacklevel=2)
            continue
        hits = sum(1 for d in rl.doc_ids()[:k] if d in rel)
        report.per_query[qid] = hits / len(rel)
    return report


def ndcg_at_k(run: dict[str, RankedList], qrels: dict, k: int = 10) -> MetricReport:
    """Graded gain 2^rel - 1 with log2(rank + 1) discount, divided by the
    ideal DCG at the same cutoff."""
    report = MetricReport("ndcg", k)
    for qid, rl in run.items():
        grades = qrels.get(qid, {})
        ideal = sorted((r for r in grades.values() if r > 0), reverse=True)[:k]
        idcg = sum((2**r - 1) / math.log2(i + 2) for i, r in enumerate(ideal))
        if idcg == 0.0:
            warnings.warn(f"query {qid!r} has zero ideal DCG; excluded", EvalWarning,
                          stacklevel=2)
            continue
        dcg = sum(
            (2 ** grades.get(d, 0) - 1) / math.log2(rank + 1)
            for rank, d in enumerate(rl.doc_ids()[:k], start=1)
        )
        report.per_query[qid] = dcg / idcg
    return report


def top_n_hit(run: dict[str, RankedList], answers: dict[str, list[str]],
              corpus, n: int) -> MetricReport:
    """1 if any top-n document contains any answer string (case-insensitive)."""
    report = MetricReport("top", n)
    for qid, rl in run.items():
        strings = [a.lower() for a in answers.get(qid, []) if a]
        if not strings:
            warnings.warn(f"query {qid!r} has no answer strings; excluded", EvalWarning,
                          stacklevel=2)
            continue
        hit = 0.0
        for doc_id in rl.doc_ids()[:n]:
            text = corpus[doc_id].lower()
            if any(a in text for a in strings):
                hit = 1.0
                break
        report.per_query[qid] = hit
    return report


def rbo(list_a: list[str], list_b: list[str], p: float = 0.9) -> float:
    """Extrapolated rank-biased overlap of two ranked lists.

    Agreement at each depth d is weighted (1-p) * p^(d-1); past the observed
    common depth the final agreement is assumed to persist (the standard
    truncation extrapolation). Lists must not repeat items internally.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not list_a or not list_b:
        warnings.warn("rbo of an empty list is 0", EvalWarning, stacklevel=2)
        return 0.0
    if len(set(list_a)) != len(list_a) or len(set(list_b)) != len(list_b):
        raise ValueError("ranked lists must not contain duplicates")
    depth = min(len(list_a), len(list_b))
    seen_a: set[str] = set()
    seen_b: set[str] = set()
    overlap = 0
    agreement = 0.0
    acc = 0.0
    for d in range(1, depth + 1):
        x, y = list_a[d - 1], list_b[d - 1]
        if x == y:
            overlap += 1
        else:
            if x in seen_b:
                overlap += 1
            if y in seen_a:
                overlap += 1
        seen_a.add(x)
        seen_b.add(y)
        agreement = overlap / d
        acc += (1.0 - p) * p ** (d - 1) * agreement
    return acc + agreement * p**depth
