"""Result fusion across the three experts.

The default fuses raw score sums over the union of the experts' top-K lists;
a document missing from one expert's list inherits that expert's fallback
score s_K. Variants: min-max normalized sum/max (fallback contributes 0;
a degenerate constant list normalizes to 0.5), reciprocal-rank sum/max
(fallback contributes 0), and a linear combination with weights fitted by
grid search on a dev set.
"""

from __future__ import annotations

import numpy as np

from .data import RankedList, rank_entries
from .model import EXPERT_IDS

FUSION_METHODS = ("sum", "normsum", "normmax", "sumrr", "maxrr", "linear")


def _check_same_query(lists: dict[str, tuple[RankedList, float]]) -> str:
    qids = {rl.qid for rl, _ in lists.values()}
    if len(qids) != 1:
        raise ValueError(f"fusing lists for different queries: {sorted(qids)}")
    return qids.pop()


def _candidate_pool(lists: dict[str, tuple[RankedList, float]]) -> list[str]:
    pool: dict[str, None] = {}
    for eid in EXPERT_IDS:
        for doc_id, _ in lists[eid][0].entries:
            pool.setdefault(doc_id)
    return list(pool)


def fuse_sum(lists: dict[str, tuple[RankedList, float]], k: int) -> RankedList:
    """Score-sum fusion with the K-th-score fallback."""
    qid = _check_same_query(lists)
    score_maps = {eid: dict(lists[eid][0].entries) for eid in EXPERT_IDS}
    fallbacks = {eid: lists[eid][1] for eid in EXPERT_IDS}
    fused = []
    for doc_id in _candidate_pool(lists):
        total = 0.0
        for eid in EXPERT_IDS:
            total += score_maps[eid].get(doc_id, fallbacks[eid])
        fused.append((doc_id, total))
    return RankedList(qid=qid, entries=rank_entries(fused, k), k=k)


def _minmax_normalize(rl: RankedList) -> dict[str, float]:
    if not rl.entries:
        return {}
    scores = [s for _, s in rl.entries]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return {d: 0.5 for d, _ in rl.entries}
    return {d: (s - lo) / (hi - lo) for d, s in rl.entries}


def fuse_variant(method: str, lists: dict[str, tuple[RankedList, float]], k: int,
                 weights: tuple[float, float, float] | None = None) -> RankedList:
    method = method.lower()
    if method not in FUSION_METHODS:
        raise ValueError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")
    if method == "sum":
        return fuse_sum(lists, k)
    qid = _check_same_query(lists)
    pool = _candidate_pool(lists)

    if method in ("normsum", "normmax"):
        norm = {eid: _minmax_normalize(lists[eid][0]) for eid in EXPERT_IDS}
        agg = sum if method == "normsum" else max
        fused = [(d, float(agg(norm[eid].get(d, 0.0) for eid in EXPERT_IDS))) for d in pool]
    elif method in ("sumrr", "maxrr"):
        rr = {
            eid: {doc: 1.0 / rank for rank, (doc, _) in enumerate(lists[eid][0].entries, 1)}
            for eid in EXPERT_IDS
        }
        agg = sum if method == "sumrr" else max
        fused = [(d, float(agg(rr[eid].get(d, 0.0) for eid in EXPERT_IDS))) for d in pool]
    else:  # linear
        if weights is None:
            raise ValueError("linear fusion requires fitted weights")
        score_maps = {eid: dict(lists[eid][0].entries) for eid in EXPERT_IDS}
        fallbacks = {eid: lists[eid][1] for eid in EXPERT_IDS}
        fused = [
            (d, sum(w * score_maps[eid].get(d, fallbacks[eid])
                    for w, eid in zip(weights, EXPERT_IDS)))
            for d in pool
        ]
    return RankedList(qid=qid, entries=rank_entries(fused, k), k=k)


# ---------------------------------------------------------------------------
# Linear fusion weight fitting
# ---------------------------------------------------------------------------


def _simplex_grid(step: float = 0.01) -> np.ndarray:
    n = round(1.0 / step)
    combos = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            combos.append((i / n, j / n, (n - i - j) / n))
    return np.array(combos, dtype=np.float64)


def fit_linear_fusion(dev_lists: dict[str, dict[str, tuple[RankedList, float]]],
                      qrels: dict[str, dict[str, int]], cutoff: int = 10,
                      step: float = 0.01) -> tuple[float, float, float]:
    """Expert weights on the simplex maximizing dev MRR@cutoff.

    Deterministic grid search; ties keep the first grid point in
    lexicographic order.
    """
    if not dev_lists:
        raise ValueError("empty dev set")
    grid = _simplex_grid(step)  # (M, 3)
    total_rr = np.zeros(len(grid))
    n_queries = 0
    for qid, lists in dev_lists.items():
        rel = {d for d, r in qrels.get(qid, {}).items() if r > 0}
        if not rel:
            continue
        n_queries += 1
        pool = _candidate_pool(lists)
        score_maps = {eid: dict(lists[eid][0].entries) for eid in EXPERT_IDS}
        fallbacks = {eid: lists[eid][1] for eid in EXPERT_IDS}
        S = np.array(
            [[score_maps[eid].get(d, fallbacks[eid]) for eid in EXPERT_IDS] for d in pool]
        )  # (C, 3)
        F = S @ grid.T  # (C, M)
        ids = np.array(pool)
        best_rr = np.zeros(len(grid))
        for d in rel:
            where = np.nonzero(ids == d)[0]
            if not len(where):
                continue
            di = int(where[0])
            row = F[di]  # (M,)
            higher = (F > row).sum(axis=0)
            tied_before = ((F == row) & (ids < d)[:, None]).sum(axis=0)
            rank = 1 + higher + tied_before
            rr = np.where(rank <= cutoff, 1.0 / rank, 0.0)
            best_rr = np.maximum(best_rr, rr)
        total_rr += best_rr
    if not n_queries:
        raise ValueError("dev set has no judged queries")
    best = int(np.argmax(total_rr))  # argmax keeps the first maximal grid point
    a = grid[best]
    return float(a[0]), float(a[1]), float(a[2])
