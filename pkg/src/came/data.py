"""Shared lightweight data types."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class Corpus:
    """Document id -> text map with a stable insertion order."""

    texts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for doc_id, text in self.texts.items():
            if not text:
                raise ValueError(f"document {doc_id!r} has empty text")

    def __len__(self) -> int:
        return len(self.texts)

    def __getitem__(self, doc_id: str) -> str:
        return self.texts[doc_id]

    @property
    def doc_ids(self) -> list[str]:
        return list(self.texts)

    @classmethod
    def load_jsonl(cls, path) -> "Corpus":
        texts: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["id"] in texts:
                    raise ValueError(f"duplicate document id {rec['id']!r}")
                texts[rec["id"]] = rec["text"]
        return cls(texts)

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for doc_id, text in self.texts.items():
                fh.write(json.dumps({"id": doc_id, "text": text}) + "\n")


@dataclass
class RankedList:
    """Ordered (doc_id, score) results for one query.

    Scores are non-increasing, ties broken by ascending doc id, and at most
    k entries are kept.
    """

    qid: str
    entries: list[tuple[str, float]]
    k: int

    def __post_init__(self):
        if len(self.entries) > self.k:
            raise ValueError(f"{len(self.entries)} entries exceed k={self.k}")
        for (d1, s1), (d2, s2) in zip(self.entries, self.entries[1:]):
            if s2 > s1:
                raise ValueError(f"scores increase at {d1!r}/{d2!r}")

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]


def rank_entries(scored: list[tuple[str, float]], k: int) -> list[tuple[str, float]]:
    """Deterministic top-k: score descending, then doc id ascending."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    ordered = sorted(scored, key=lambda e: (-e[1], e[0]))
    return ordered[:k]


@dataclass
class TrainingInstance:
    """A query with one positive document and a fixed set of negatives."""

    qid: str
    query: str
    pos_id: str
    neg_ids: list[str]

    def __post_init__(self):
        if self.pos_id in self.neg_ids:
            raise ValueError(f"positive {self.pos_id!r} also listed as a negative")
