"""TREC-format artifacts: 6-column run files, 4-column qrels, and the
fallback-score sidecar (TSV of qid and s_K, one row per query).

Run scores are printed with 6 decimal places; sidecar scores keep full
precision (repr) because fusion consumes them verbatim.
"""

from __future__ import annotations

import io

from .binio import atomic_write_text
from .data import RankedList


def run_tag(kind: str, hash8: str) -> str:
    return f"CAME-{kind}-{hash8}"


def format_run(lists: list[RankedList], tag: str) -> str:
    buf = io.StringIO()
    for rl in lists:
        for rank, (doc_id, score) in enumerate(rl.entries, start=1):
            buf.write(f"{rl.qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")
    return buf.getvalue()


def write_run(path, lists: list[RankedList], tag: str) -> None:
    atomic_write_text(path, format_run(lists, tag))


def read_run(path) -> dict[str, RankedList]:
    """Parse a run file back into per-query ranked lists (insertion order)."""
    by_qid: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _, doc_id, _rank, score, _tag = line.split()
            by_qid.setdefault(qid, []).append((doc_id, float(score)))
    return {
        qid: RankedList(qid=qid, entries=entries, k=len(entries))
        for qid, entries in by_qid.items()
    }


def write_qrels(path, qrels: dict[str, dict[str, int]]) -> None:
    lines = []
    for qid, docs in qrels.items():
        for doc_id, rel in docs.items():
            lines.append(f"{qid} 0 {doc_id} {rel}\n")
    atomic_write_text(path, "".join(lines))


def read_qrels(path) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _, doc_id, rel = line.split()
            qrels.setdefault(qid, {})[doc_id] = int(rel)
    return qrels


def write_sidecar(path, s_k: dict[str, float]) -> None:
    atomic_write_text(path, "".join(f"{qid}\t{v!r}\n" for qid, v in s_k.items()))


def read_sidecar(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, v = line.rstrip("\n").split("\t")
            out[qid] = float(v)
    return out
