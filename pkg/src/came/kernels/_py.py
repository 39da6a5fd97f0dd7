"""Pure-numpy scoring kernels (the fallback backend).

Both kernels score one query against a whole packed corpus:

- sparse_dot_scores walks term postings in ascending term order, so each
  document's accumulation order matches the canonical per-document sparse
  dot product.
- maxsim_scores computes one big similarity matrix and reduces it per
  document segment.
"""

from __future__ import annotations

import numpy as np


def sparse_dot_scores(q_terms: np.ndarray, q_weights: np.ndarray,
                      offsets: np.ndarray, posting_docs: np.ndarray,
                      posting_weights: np.ndarray, n_docs: int
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate query-term x posting products into per-document scores.

    `q_terms` must be strictly ascending. Returns (scores, touched) where
    touched marks documents hit by at least one posting.
    """
    scores = np.zeros(n_docs, dtype=np.float64)
    touched = np.zeros(n_docs, dtype=bool)
    for t, qw in zip(q_terms, q_weights):
        lo, hi = offsets[t], offsets[t + 1]
        if lo == hi:
            continue
        docs = posting_docs[lo:hi]
        scores[docs] += qw * posting_weights[lo:hi]
        touched[docs] = True
    return scores, touched


def maxsim_scores(q_vecs: np.ndarray, flat_vecs: np.ndarray,
                  offsets: np.ndarray) -> np.ndarray:
    """Sum-of-max-similarity of q_vecs against each token segment.

    `flat_vecs` stacks every document's token vectors; document i owns rows
    offsets[i]:offsets[i+1] and every segment must be non-empty (a CLS row
    is always present).
    """
    n_docs = len(offsets) - 1
    if n_docs == 0:
        return np.zeros(0, dtype=np.float64)
    sims = q_vecs @ flat_vecs.T  # (Lq, T)
    seg_max = np.maximum.reduceat(sims, offsets[:-1], axis=1)  # (Lq, n_docs)
    return seg_max.sum(axis=0)
