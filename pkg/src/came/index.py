"""Per-expert corpus indexes and exact top-K retrieval.

Every document is encoded once (no approximation); the lexical index keeps
term -> (doc, weight) postings sorted by doc, the local index packs all token
vectors into one matrix with per-document offsets, and the global index is a
dense matrix. Indexes are stamped with the parameter hash of the checkpoint
that produced them, and a stamp mismatch is rejected at query time.

Top-K fallback scores: an expert that scores every document reports the K-th
(or, if the corpus is smaller than K, the last) score; the lexical expert
lists only documents with nonzero term overlap, and when that support is
exhausted the fallback is exactly 0, matching the true score of every
unlisted document.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .binio import atomic_write, pack_container, unpack_container
from .checkpoint import params_hash
from .data import Corpus, RankedList, rank_entries
from .experts import DocReps, encode_reps
from .model import EXPERT_IDS, ModelConfig, ModelParams
from .text import Vocab

IDX_MAGIC = b"CAMEIDX1"
IDX_VERSION = 1


class IndexStampError(ValueError):
    """Index was built from different parameters than the ones supplied."""


@dataclass
class ExpertIndex:
    expert: str
    checkpoint_hash: str
    doc_ids: list[str]
    # lexical postings (term-major CSR over the vocabulary)
    offsets: np.ndarray | None = None
    posting_docs: np.ndarray | None = None
    posting_weights: np.ndarray | None = None
    vocab_size: int = 0
    # local token store
    flat_vecs: np.ndarray | None = None
    doc_offsets: np.ndarray | None = None
    # global vector store
    mat: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.doc_ids)


def _lexical_index(doc_reps: list[DocReps], vocab_size: int) -> dict:
    by_term: dict[int, list[tuple[int, float]]] = {}
    for di, reps in enumerate(doc_reps):
        for t, w in reps.lex.items():
            by_term.setdefault(t, []).append((di, w))
    offsets = np.zeros(vocab_size + 1, dtype=np.int64)
    pdocs: list[int] = []
    pws: list[float] = []
    for t in range(vocab_size):
        plist = by_term.get(t, ())
        offsets[t + 1] = offsets[t] + len(plist)
        for di, w in plist:  # insertion order is ascending doc index already
            pdocs.append(di)
            pws.append(w)
    return {
        "offsets": offsets,
        "posting_docs": np.array(pdocs, dtype=np.int64),
        "posting_weights": np.array(pws, dtype=np.float64),
        "vocab_size": vocab_size,
    }


def build_indexes(corpus: Corpus, params: ModelParams, cfg: ModelConfig, vocab: Vocab,
                  experts=EXPERT_IDS) -> dict[str, ExpertIndex]:
    """Encode the whole corpus once and materialize the requested indexes."""
    doc_ids = corpus.doc_ids
    try:
        doc_reps = encode_reps([corpus[d] for d in doc_ids], params, cfg, vocab,
                               cfg.max_d_len, experts=experts)
    except Exception as err:
        raise RuntimeError(f"encoding failed while indexing: {err}") from err
    chash = params_hash(params)
    out: dict[str, ExpertIndex] = {}
    if "lex" in experts:
        out["lex"] = ExpertIndex(expert="lex", checkpoint_hash=chash, doc_ids=doc_ids,
                                 **_lexical_index(doc_reps, cfg.vocab_size))
    if "loc" in experts:
        doc_offsets = np.zeros(len(doc_ids) + 1, dtype=np.int64)
        for di, reps in enumerate(doc_reps):
            doc_offsets[di + 1] = doc_offsets[di] + reps.loc.shape[0]
        flat = (np.concatenate([r.loc for r in doc_reps], axis=0)
                if doc_ids else np.zeros((0, cfg.d_local)))
        out["loc"] = ExpertIndex(expert="loc", checkpoint_hash=chash, doc_ids=doc_ids,
                                 flat_vecs=np.ascontiguousarray(flat),
                                 doc_offsets=doc_offsets)
    if "glob" in experts:
        mat = (np.stack([r.glob for r in doc_reps])
               if doc_ids else np.zeros((0, cfg.d_model)))
        out["glob"] = ExpertIndex(expert="glob", checkpoint_hash=chash, doc_ids=doc_ids,
                                  mat=np.ascontiguousarray(mat))
    return out


def build_index(expert: str, corpus: Corpus, params: ModelParams, cfg: ModelConfig,
                vocab: Vocab) -> ExpertIndex:
    return build_indexes(corpus, params, cfg, vocab, experts=(expert,))[expert]


# ---------------------------------------------------------------------------
# Query-time scoring
# ---------------------------------------------------------------------------


def index_scores(index: ExpertIndex, q_reps: DocReps) -> tuple[np.ndarray, np.ndarray]:
    """(scores, candidate mask) over the whole corpus for one encoded query."""
    n = len(index.doc_ids)
    if index.expert == "lex":
        pairs = sorted(q_reps.lex.items())
        if not pairs:
            return np.zeros(n), np.zeros(n, dtype=bool)
        q_terms = np.array([t for t, _ in pairs], dtype=np.int64)
        q_ws = np.array([w for _, w in pairs], dtype=np.float64)
        return kernels.sparse_dot_scores(
            q_terms, q_ws, index.offsets, index.posting_docs,
            index.posting_weights, n)
    if index.expert == "loc":
        scores = kernels.maxsim_scores(
            np.ascontiguousarray(q_reps.loc), index.flat_vecs, index.doc_offsets)
        return scores, np.ones(n, dtype=bool)
    if index.expert == "glob":
        return index.mat @ q_reps.glob, np.ones(n, dtype=bool)
    raise ValueError(f"unknown expert id {index.expert!r}")


def topk_from_scores(qid: str, doc_ids: list[str], scores: np.ndarray,
                     candidates: np.ndarray, k: int) -> tuple[RankedList, float]:
    """Rank candidate documents; also return the fallback score s_k."""
    scored = [(doc_ids[i], float(scores[i])) for i in np.nonzero(candidates)[0]]
    entries = rank_entries(scored, k)
    if len(entries) >= k:
        s_k = entries[-1][1]
    elif len(entries) == len(doc_ids):  # corpus smaller than k
        s_k = entries[-1][1] if entries else 0.0
    else:  # support exhausted: every unlisted document truly scores 0
        s_k = 0.0
    return RankedList(qid=qid, entries=entries, k=k), s_k


def expert_topk(expert: str, qid: str, query: str, index: ExpertIndex,
                params: ModelParams, cfg: ModelConfig, vocab: Vocab, k: int
                ) -> tuple[RankedList, float]:
    """Exact top-k for one query, plus the expert's fallback score."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if expert != index.expert:
        raise ValueError(f"index is for expert {index.expert!r}, not {expert!r}")
    chash = params_hash(params)
    if chash != index.checkpoint_hash:
        raise IndexStampError(
            f"index built from checkpoint {index.checkpoint_hash[:8]} "
            f"but scoring with {chash[:8]}")
    (q_reps,) = encode_reps([query], params, cfg, vocab, cfg.max_q_len,
                            experts=(expert,))
    scores, candidates = index_scores(index, q_reps)
    return topk_from_scores(qid, index.doc_ids, scores, candidates, k)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_index(path, index: ExpertIndex) -> None:
    header = {
        "expert": index.expert,
        "checkpoint_hash": index.checkpoint_hash,
        "doc_ids": index.doc_ids,
        "vocab_size": index.vocab_size,
    }
    arrays: dict[str, np.ndarray] = {}
    for name in ("offsets", "posting_docs", "posting_weights",
                 "flat_vecs", "doc_offsets", "mat"):
        arr = getattr(index, name)
        if arr is not None:
            arrays[name] = np.asarray(arr, dtype=np.float64)
    atomic_write(path, pack_container(IDX_MAGIC, IDX_VERSION, header, arrays))


def load_index(path) -> ExpertIndex:
    with open(path, "rb") as fh:
        header, arrays = unpack_container(fh.read(), IDX_MAGIC, IDX_VERSION)
    kwargs: dict = {}
    for name in ("offsets", "posting_docs", "doc_offsets"):
        if name in arrays:
            kwargs[name] = arrays[name].astype(np.int64)
    for name in ("posting_weights", "flat_vecs", "mat"):
        if name in arrays:
            kwargs[name] = arrays[name]
    return ExpertIndex(
        expert=header["expert"],
        checkpoint_hash=header["checkpoint_hash"],
        doc_ids=header["doc_ids"],
        vocab_size=header["vocab_size"],
        **kwargs,
    )
