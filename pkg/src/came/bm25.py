"""Okapi BM25 over an inverted index; the bootstrap negative source.

Uses k1=0.9, b=0.4 and the nonnegative idf variant
ln(1 + (N - df + 0.5) / (df + 0.5)). Per-document term contributions are
precomputed at build time, so query scoring reduces to the shared
sparse-accumulation kernel.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import Corpus, RankedList, rank_entries
from .text import split_tokens


@dataclass
class BM25Index:
    doc_ids: list[str]
    term_to_idx: dict[str, int]
    idf: np.ndarray  # (n_terms,)
    offsets: np.ndarray  # (n_terms + 1,) into postings
    posting_docs: np.ndarray
    posting_weights: np.ndarray  # tf * (k1+1) / (tf + k1 * (1 - b + b * dl/avgdl))
    k1: float
    b: float


def build_bm25(corpus: Corpus, k1: float = 0.9, b: float = 0.4) -> BM25Index:
    doc_ids = corpus.doc_ids
    doc_tokens = [split_tokens(corpus[d]) for d in doc_ids]
    doc_len = np.array([len(t) for t in doc_tokens], dtype=np.float64)
    avgdl = doc_len.mean() if len(doc_ids) else 1.0

    df: Counter = Counter()
    tfs = []
    for toks in doc_tokens:
        tf = Counter(toks)
        tfs.append(tf)
        df.update(tf.keys())

    terms = sorted(df)
    term_to_idx = {t: i for i, t in enumerate(terms)}
    n = len(doc_ids)
    idf = np.array(
        [math.log(1.0 + (n - df[t] + 0.5) / (df[t] + 0.5)) for t in terms],
        dtype=np.float64,
    )

    postings: list[list[tuple[int, float]]] = [[] for _ in terms]
    for di, tf in enumerate(tfs):
        norm = k1 * (1.0 - b + b * doc_len[di] / avgdl)
        for t, f in tf.items():
            w = f * (k1 + 1.0) / (f + norm)
            postings[term_to_idx[t]].append((di, w))

    offsets = np.zeros(len(terms) + 1, dtype=np.int64)
    pdocs, pws = [], []
    for ti, plist in enumerate(postings):
        plist.sort()  # ascending doc index
        offsets[ti + 1] = offsets[ti] + len(plist)
        for di, w in plist:
            pdocs.append(di)
            pws.append(w)
    return BM25Index(
        doc_ids=doc_ids,
        term_to_idx=term_to_idx,
        idf=idf,
        offsets=offsets,
        posting_docs=np.array(pdocs, dtype=np.int64),
        posting_weights=np.array(pws, dtype=np.float64),
        k1=k1,
        b=b,
    )


def bm25_scores(index: BM25Index, query: str) -> tuple[np.ndarray, np.ndarray]:
    """(scores, touched) over the whole corpus for one query string."""
    qtf = Counter(split_tokens(query))
    pairs = sorted(
        (index.term_to_idx[t], f) for t, f in qtf.items() if t in index.term_to_idx
    )
    if not pairs:
        return np.zeros(len(index.doc_ids)), np.zeros(len(index.doc_ids), dtype=bool)
    q_terms = np.array([p[0] for p in pairs], dtype=np.int64)
    q_weights = np.array(
        [f * index.idf[t] for t, f in pairs], dtype=np.float64
    )
    return kernels.sparse_dot_scores(
        q_terms, q_weights, index.offsets, index.posting_docs,
        index.posting_weights, len(index.doc_ids),
    )


def bm25_topk(index: BM25Index, qid: str, query: str, k: int) -> RankedList:
    """Top-k documents containing at least one query term."""
    scores, touched = bm25_scores(index, query)
    scored = [
        (index.doc_ids[i], float(scores[i])) for i in np.nonzero(touched)[0]
    ]
    return RankedList(qid=qid, entries=rank_entries(scored, k), k=k)
