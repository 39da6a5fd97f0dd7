"""The three matching experts over the shared encoder.

- lexical: vocabulary-sized nonnegative term weights from the tied MLM head,
  aggregated by a per-dimension max over token positions; score is a sparse
  dot product.
- local: per-token vectors projected to a narrow width; score is the sum over
  query tokens of the best dot product against any document token (MaxSim).
- global: the CLS output vector; score is a plain dot product.

Graph-building variants (batched, differentiable) drive training; the numeric
variants drive indexing and retrieval. Both run the identical encoder forward,
so representations agree bit for bit.

Numeric per-document scorers define the canonical accumulation order: sparse
dot products sum over ascending term ids, which the batch kernels reproduce
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import EXPERT_IDS, ModelConfig, ModelParams, encode_expert, encode_shared
from .text import Vocab, tokenize


# ---------------------------------------------------------------------------
# Graph-side representations (batched, differentiable)
# ---------------------------------------------------------------------------


def mlm_logits(expert_out: ad.Node, leaves: dict) -> ad.Node:
    """(B, L, V) logits: decoder tied to the token embedding plus a free bias."""
    return ad.add(ad.matmul(expert_out, ad.transpose(leaves["tok_emb"])), leaves["mlm.bias"])


def lexical_reps_node(expert_out: ad.Node, mask: np.ndarray, leaves: dict) -> ad.Node:
    """(B, V) term weights: max over non-PAD rows of log(1 + relu(logits))."""
    weights = ad.log(ad.add(ad.relu(mlm_logits(expert_out, leaves)), 1.0))
    row_bias = ((1.0 - mask) * ad.BIG_NEG)[:, :, None]  # PAD rows drop out
    return ad.max_axis(ad.add(weights, row_bias), axis=1)


def local_reps_node(expert_out: ad.Node, leaves: dict) -> ad.Node:
    """(B, L, d_local) projected token vectors; PAD rows masked at scoring."""
    return ad.matmul(expert_out, leaves["local.w"])


def global_reps_node(expert_out: ad.Node) -> ad.Node:
    """(B, d) CLS rows."""
    B, _, d = expert_out.shape
    cls_col = ad.take(expert_out, np.array([0], dtype=np.int64), axis=1)
    return ad.reshape(cls_col, (B, d))


def lexical_score_node(q_reps: ad.Node, d_reps: ad.Node) -> ad.Node:
    """(B, D) score matrix: dot products of vocabulary weight vectors."""
    return ad.matmul(q_reps, ad.transpose(d_reps))


def global_score_node(q_reps: ad.Node, d_reps: ad.Node) -> ad.Node:
    return ad.matmul(q_reps, ad.transpose(d_reps))


def local_score_node(q_reps: ad.Node, q_mask: np.ndarray,
                     d_reps: ad.Node, d_mask: np.ndarray) -> ad.Node:
    """(B, D) MaxSim matrix composed from primitive ops.

    For each query row, take the max dot product over the document's real
    tokens, zero out PAD query rows, and sum over query rows.
    """
    B, Lq, dl = q_reps.shape
    D, Ld, _ = d_reps.shape
    sims = ad.matmul(ad.reshape(q_reps, (B * Lq, dl)),
                     ad.transpose(ad.reshape(d_reps, (D * Ld, dl))))
    sims = ad.reshape(sims, (B, Lq, D, Ld))
    d_bias = ((1.0 - d_mask) * ad.BIG_NEG)[None, None, :, :]
    best = ad.max_axis(ad.add(sims, d_bias), axis=3)  # (B, Lq, D)
    best = ad.mul(best, q_mask[:, :, None])
    return ad.sum_axis(best, axis=1)


# ---------------------------------------------------------------------------
# Numeric representations
# ---------------------------------------------------------------------------


@dataclass
class DocReps:
    """Per-text numeric representations for all three experts."""

    lex: dict[int, float]
    loc: np.ndarray  # (true_len, d_local), CLS row first, PAD rows absent
    glob: np.ndarray  # (d_model,)


def lexical_vec(weights: np.ndarray) -> dict[int, float]:
    """Sparse map from a dense (V,) weight vector, dropping zero entries."""
    (nz,) = np.nonzero(weights > 0.0)
    return {int(t): float(weights[t]) for t in nz}


def encode_reps(texts: list[str], params: ModelParams, cfg: ModelConfig, vocab: Vocab,
                max_len: int, experts=EXPERT_IDS) -> list[DocReps]:
    """Encode each text separately (bit-stable regardless of batch company)
    and extract every requested expert's representation from one shared pass."""
    out = []
    leaves = params.as_leaves(trainable=False)
    for text in texts:
        seq = tokenize(text, max_len, vocab)
        shared, mask = encode_shared([seq], leaves, cfg)
        lex: dict[int, float] = {}
        loc = np.zeros((0, cfg.d_local))
        glob = np.zeros((cfg.d_model,))
        if "lex" in experts:
            eo = encode_expert("lex", shared, mask, leaves, cfg)
            lex = lexical_vec(lexical_reps_node(eo, mask, leaves).value[0])
        if "loc" in experts:
            eo = encode_expert("loc", shared, mask, leaves, cfg)
            loc = local_reps_node(eo, leaves).value[0, : seq.length].copy()
        if "glob" in experts:
            eo = encode_expert("glob", shared, mask, leaves, cfg)
            glob = global_reps_node(eo).value[0].copy()
        out.append(DocReps(lex=lex, loc=loc, glob=glob))
    return out


# ---------------------------------------------------------------------------
# Canonical per-document scorers
# ---------------------------------------------------------------------------


def lexical_score(q: dict[int, float], d: dict[int, float]) -> float:
    """Sparse dot product, accumulated over ascending shared term ids."""
    if len(d) < len(q):
        q, d = d, q
    total = 0.0
    for t in sorted(q):
        w = d.get(t)
        if w is not None:
            total += q[t] * w
    return total


def local_score(q: np.ndarray, d: np.ndarray) -> float:
    """Sum over query rows of the max dot product against document rows."""
    sims = q @ d.T
    return float(np.sum(sims.max(axis=1)))


def global_score(q: np.ndarray, d: np.ndarray) -> float:
    return float(np.dot(q, d))


def score_reps(expert: str, q: DocReps, d: DocReps) -> float:
    if expert == "lex":
        return lexical_score(q.lex, d.lex)
    if expert == "loc":
        return local_score(q.loc, d.loc)
    if expert == "glob":
        return global_score(q.glob, d.glob)
    raise ValueError(f"unknown expert id {expert!r}; expected one of {EXPERT_IDS}")


def expert_score(expert: str, q_text: str, d_text: str, params: ModelParams,
                 cfg: ModelConfig, vocab: Vocab) -> float:
    """End-to-end relevance of one query-document pair under one expert."""
    (q,) = encode_reps([q_text], params, cfg, vocab, cfg.max_q_len, experts=(expert,))
    (d,) = encode_reps([d_text], params, cfg, vocab, cfg.max_d_len, experts=(expert,))
    return score_reps(expert, q, d)
