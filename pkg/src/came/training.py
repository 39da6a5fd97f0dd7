"""Two-stage competitive training.

Stage one (standardized) sums the three experts' contrastive losses with
equal weight so every expert develops basic matching ability. Stage two
(specialized) weights each expert's per-instance loss by a softmax over the
inverse ranks its head assigns the positive document, so experts compete for
every training sample and specialize on the patterns they already handle
best. The weights are constants in the graph: ranks are piecewise constant,
so no gradient flows through them.

Phase A draws negatives from a BM25 bootstrap pool; phase B re-mines
negatives from the model's own top results (union over experts) and
continues with the specialized objective. The learning-rate schedule spans
both phases in optimizer steps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import experts as ex
from .checkpoint import Checkpoint
from .data import Corpus, TrainingInstance
from .index import build_indexes, expert_topk
from .model import (
    EXPERT_IDS,
    ModelConfig,
    ModelParams,
    encode_expert,
    encode_shared,
    init_params,
    rng_for,
)
from .optim import AdamWState, optimizer_step
from .text import Vocab, tokenize


@dataclass
class TrainSchedule:
    tau: float = 0.5
    standardized_ratio: float = 0.2
    epochs_bootstrap: int = 2
    epochs_hard: int = 1
    batch_size: int = 8
    lr: float = 3e-3
    flops_weight: float = 0.01
    n_negatives: int = 7
    mine_depth: int = 50
    bm25_depth: int = 100
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self) -> "TrainSchedule":
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.standardized_ratio <= 1.0:
            raise ValueError(f"standardized_ratio must lie in [0, 1], got {self.standardized_ratio}")
        if self.batch_size < 1 or self.n_negatives < 1:
            raise ValueError("batch_size and n_negatives must be >= 1")
        return self


# ---------------------------------------------------------------------------
# Objective building blocks
# ---------------------------------------------------------------------------


def candidate_probs(scores: ad.Node) -> ad.Node:
    """Softmax distribution over one instance's candidate documents."""
    if scores.value.ndim != 1 or scores.value.shape[0] < 2:
        raise ValueError(f"need >= 2 candidate scores, got shape {scores.shape}")
    return ad.softmax(scores, axis=-1)


def contrastive_loss(probs: ad.Node, pos_index: int) -> ad.Node:
    """Negative log probability of the positive document."""
    if not 0 <= pos_index < probs.value.shape[0]:
        raise ValueError(f"pos_index {pos_index} out of range")
    picked = ad.take(probs, np.array([pos_index], dtype=np.int64), axis=0)
    return ad.neg(ad.log(ad.reshape(picked, ())))


def in_batch_candidates(batch: list[TrainingInstance]) -> list[tuple[list[str], int]]:
    """Per-instance candidate doc ids: own positive and negatives plus every
    other instance's documents, deduplicated; the positive's index is kept."""
    if not batch:
        raise ValueError("empty batch")
    out = []
    for i, inst in enumerate(batch):
        cands: dict[str, None] = {}
        cands[inst.pos_id] = None
        for d in inst.neg_ids:
            cands.setdefault(d)
        for j, other in enumerate(batch):
            if j == i:
                continue
            cands.setdefault(other.pos_id)
            for d in other.neg_ids:
                cands.setdefault(d)
        ids = list(cands)
        out.append((ids, ids.index(inst.pos_id)))
    return out


def rank_of_positive(scores: np.ndarray, pos_index: int) -> int:
    """1 + number of candidates scoring strictly higher (ties favor the
    positive)."""
    scores = np.asarray(scores)
    if not 0 <= pos_index < scores.shape[0]:
        raise ValueError(f"pos_index {pos_index} out of range")
    return 1 + int((scores > scores[pos_index]).sum())


def competitive_weights(ranks, tau: float) -> np.ndarray:
    """Softmax over inverse ranks scaled by 1/tau; sums to 1 exactly for
    equal ranks thanks to the max shift."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if (ranks < 1).any():
        raise ValueError(f"ranks must be >= 1, got {ranks}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = (1.0 / ranks) / tau
    e = np.exp(x - x.max())
    return e / e.sum()


def flops_penalty(reps: ad.Node) -> ad.Node:
    """Sparsity pressure: sum over vocabulary dims of the squared mean
    activation across the batch."""
    m = ad.mean_axis(reps, axis=0)
    return ad.sum_axis(ad.mul(m, m))


# ---------------------------------------------------------------------------
# Batch graph construction
# ---------------------------------------------------------------------------


@dataclass
class BatchGraph:
    score_nodes: dict[str, ad.Node]  # expert -> (B, D) score matrix
    cand_idx: list[tuple[np.ndarray, int]]  # per instance: doc indexes, pos slot
    q_lex: ad.Node
    d_lex: ad.Node


@dataclass
class BatchStats:
    loss: float = 0.0
    expert_loss: dict[str, float] = field(default_factory=dict)
    mean_weights: dict[str, float] = field(default_factory=dict)
    instance_weights: list[tuple[str, float, float, float]] = field(default_factory=list)


def build_batch_graph(batch: list[TrainingInstance], corpus: Corpus, leaves: dict,
                      cfg: ModelConfig, vocab: Vocab) -> BatchGraph:
    doc_ids: dict[str, None] = {}
    for inst in batch:
        doc_ids.setdefault(inst.pos_id)
        for d in inst.neg_ids:
            doc_ids.setdefault(d)
    doc_list = list(doc_ids)
    slot = {d: i for i, d in enumerate(doc_list)}

    q_seqs = [tokenize(inst.query, cfg.max_q_len, vocab) for inst in batch]
    d_seqs = [tokenize(corpus[d], cfg.max_d_len, vocab) for d in doc_list]
    q_shared, q_mask = encode_shared(q_seqs, leaves, cfg)
    d_shared, d_mask = encode_shared(d_seqs, leaves, cfg)

    q_lex_out = encode_expert("lex", q_shared, q_mask, leaves, cfg)
    d_lex_out = encode_expert("lex", d_shared, d_mask, leaves, cfg)
    q_lex = ex.lexical_reps_node(q_lex_out, q_mask, leaves)
    d_lex = ex.lexical_reps_node(d_lex_out, d_mask, leaves)

    q_loc = ex.local_reps_node(encode_expert("loc", q_shared, q_mask, leaves, cfg), leaves)
    d_loc = ex.local_reps_node(encode_expert("loc", d_shared, d_mask, leaves, cfg), leaves)
    q_glob = ex.global_reps_node(encode_expert("glob", q_shared, q_mask, leaves, cfg))
    d_glob = ex.global_reps_node(encode_expert("glob", d_shared, d_mask, leaves, cfg))

    score_nodes = {
        "lex": ex.lexical_score_node(q_lex, d_lex),
        "loc": ex.local_score_node(q_loc, q_mask, d_loc, d_mask),
        "glob": ex.global_score_node(q_glob, d_glob),
    }
    cand_idx = []
    for ids, pos in in_batch_candidates(batch):
        cand_idx.append((np.array([slot[d] for d in ids], dtype=np.int64), pos))
    return BatchGraph(score_nodes=score_nodes, cand_idx=cand_idx, q_lex=q_lex, d_lex=d_lex)


def _instance_loss(score_matrix: ad.Node, b: int, cand: np.ndarray, pos: int) -> ad.Node:
    row = ad.take(score_matrix, np.array([b], dtype=np.int64), axis=0)
    picked = ad.reshape(ad.take(row, cand, axis=1), (len(cand),))
    return contrastive_loss(candidate_probs(picked), pos)


def _flops_term(graph: BatchGraph, lam: float) -> ad.Node | None:
    if lam == 0.0:
        return None
    both = ad.add(flops_penalty(graph.q_lex), flops_penalty(graph.d_lex))
    return ad.scale(both, 0.5 * lam)


def _mean(nodes: list[ad.Node]) -> ad.Node:
    acc = nodes[0]
    for n in nodes[1:]:
        acc = ad.add(acc, n)
    return ad.scale(acc, 1.0 / len(nodes))


def standardized_loss(batch: list[TrainingInstance], corpus: Corpus, leaves: dict,
                      cfg: ModelConfig, vocab: Vocab, lam: float = 0.0
                      ) -> tuple[ad.Node, BatchStats]:
    """Unweighted sum of the three experts' contrastive losses plus the
    sparsity penalty."""
    graph = build_batch_graph(batch, corpus, leaves, cfg, vocab)
    stats = BatchStats()
    per_expert = {}
    for eid in EXPERT_IDS:
        losses = [
            _instance_loss(graph.score_nodes[eid], b, cand, pos)
            for b, (cand, pos) in enumerate(graph.cand_idx)
        ]
        per_expert[eid] = _mean(losses)
        stats.expert_loss[eid] = float(per_expert[eid].value)
        stats.mean_weights[eid] = 1.0
    total = ad.add(ad.add(per_expert["lex"], per_expert["loc"]), per_expert["glob"])
    penalty = _flops_term(graph, lam)
    if penalty is not None:
        total = ad.add(total, penalty)
    stats.loss = float(total.value)
    return total, stats


def specialized_loss(batch: list[TrainingInstance], corpus: Corpus, leaves: dict,
                     cfg: ModelConfig, vocab: Vocab, tau: float, lam: float = 0.0
                     ) -> tuple[ad.Node, BatchStats]:
    """Per-instance competitive weighting of the expert losses plus the
    sparsity penalty. Weights are computed from ranks over the instance's
    full candidate list (in-batch negatives included) and treated as
    constants."""
    graph = build_batch_graph(batch, corpus, leaves, cfg, vocab)
    stats = BatchStats()
    expert_sums = {eid: 0.0 for eid in EXPERT_IDS}
    weight_sums = {eid: 0.0 for eid in EXPERT_IDS}
    instance_nodes = []
    for b, (cand, pos) in enumerate(graph.cand_idx):
        ranks = [
            rank_of_positive(graph.score_nodes[eid].value[b, cand], pos)
            for eid in EXPERT_IDS
        ]
        w = competitive_weights(ranks, tau)
        terms = []
        for eid, we in zip(EXPERT_IDS, w):
            le = _instance_loss(graph.score_nodes[eid], b, cand, pos)
            expert_sums[eid] += float(le.value)
            weight_sums[eid] += float(we)
            terms.append(ad.scale(le, float(we)))
        instance_nodes.append(ad.add(ad.add(terms[0], terms[1]), terms[2]))
        stats.instance_weights.append(
            (batch[b].qid, float(w[0]), float(w[1]), float(w[2]))
        )
    total = _mean(instance_nodes)
    penalty = _flops_term(graph, lam)
    if penalty is not None:
        total = ad.add(total, penalty)
    n = len(batch)
    stats.expert_loss = {eid: expert_sums[eid] / n for eid in EXPERT_IDS}
    stats.mean_weights = {eid: weight_sums[eid] / n for eid in EXPERT_IDS}
    stats.loss = float(total.value)
    return total, stats


# ---------------------------------------------------------------------------
# Hard-negative mining
# ---------------------------------------------------------------------------


def mine_hard_negatives(params: ModelParams, cfg: ModelConfig, vocab: Vocab,
                        corpus: Corpus, queries: dict[str, str],
                        relevant: dict[str, set[str]], depth: int
                        ) -> dict[str, list[str]]:
    """Per query, the union of each expert's top-`depth` results minus all
    relevant documents. Queries whose pool comes up empty are skipped with
    a warning."""
    indexes = build_indexes(corpus, params, cfg, vocab)
    pools: dict[str, list[str]] = {}
    for qid, qtext in queries.items():
        pool: dict[str, None] = {}
        for eid in EXPERT_IDS:
            rl, _ = expert_topk(eid, qid, qtext, indexes[eid], params, cfg, vocab, depth)
            for doc_id in rl.doc_ids():
                if doc_id not in relevant.get(qid, set()):
                    pool.setdefault(doc_id)
        if not pool:
            warnings.warn(f"query {qid!r} mined an empty negative pool; skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        pools[qid] = list(pool)
    return pools


# ---------------------------------------------------------------------------
# Full schedule
# ---------------------------------------------------------------------------


@dataclass
class TrainLogRow:
    step: int
    phase: str  # bootstrap | hard
    stage: str  # standardized | specialized
    loss: float
    expert_loss: dict[str, float]
    mean_weights: dict[str, float]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[TrainLogRow]
    instance_weights: list[tuple[int, str, str, float, float, float]]
    aborted: bool = False


def _sample_negatives(rng: np.random.Generator, pool: list[str], relevant: set[str],
                      all_docs: list[str], n: int) -> list[str]:
    usable = [d for d in pool if d not in relevant]
    if len(usable) >= n:
        picks = rng.choice(len(usable), size=n, replace=False)
        return [usable[int(i)] for i in picks]
    negs = list(usable)
    rest = [d for d in all_docs if d not in relevant and d not in set(negs)]
    if len(negs) + len(rest) < n:
        raise ValueError(f"not enough non-relevant documents to draw {n} negatives")
    picks = rng.choice(len(rest), size=n - len(negs), replace=False)
    negs.extend(rest[int(i)] for i in picks)
    return negs


def train(cfg: ModelConfig, schedule: TrainSchedule, pairs: list[tuple[str, str, str]],
          corpus: Corpus, relevant: dict[str, set[str]],
          bootstrap_negatives: dict[str, list[str]], vocab: Vocab,
          params: ModelParams | None = None) -> TrainResult:
    """Run the full two-stage schedule over (qid, query, positive id) pairs.

    Phase A trains on the bootstrap pools, standardized for the first
    ceil(ratio * steps), specialized after; phase B re-mines negatives from
    the phase-A model and continues specialized. Negatives are resampled
    from the active pool every epoch.
    """
    schedule.validate()
    cfg.validate()
    if not pairs:
        raise ValueError("empty training set")
    if params is None:
        params = init_params(cfg, schedule.seed)
    rng = rng_for(schedule.seed, "train")
    all_docs = corpus.doc_ids
    n = len(pairs)
    steps_per_epoch = math.ceil(n / schedule.batch_size)
    phase_a_steps = schedule.epochs_bootstrap * steps_per_epoch
    phase_b_steps = schedule.epochs_hard * steps_per_epoch
    standardized_steps = math.ceil(schedule.standardized_ratio * phase_a_steps)
    opt = AdamWState(lr=schedule.lr, total_steps=phase_a_steps + phase_b_steps,
                     weight_decay=schedule.weight_decay)

    log: list[TrainLogRow] = []
    inst_weights: list[tuple[int, str, str, float, float, float]] = []
    step = 0

    def make_checkpoint(phase: str) -> Checkpoint:
        return Checkpoint(
            config=cfg, params=params, opt_state=opt, schedule=asdict(schedule),
            position={"phase": phase, "step": step,
                      "total_steps": phase_a_steps + phase_b_steps},
            rng_state=rng.bit_generator.state,
        )

    def run_epochs(n_epochs: int, phase: str, pools: dict[str, list[str]]) -> bool:
        nonlocal step
        for _ in range(n_epochs):
            order = rng.permutation(n)
            epoch_instances = []
            for i in order:
                qid, qtext, pos = pairs[int(i)]
                negs = _sample_negatives(rng, pools.get(qid, []),
                                         relevant.get(qid, {pos}) | {pos},
                                         all_docs, schedule.n_negatives)
                epoch_instances.append(TrainingInstance(qid, qtext, pos, negs))
            for lo in range(0, n, schedule.batch_size):
                batch = epoch_instances[lo : lo + schedule.batch_size]
                leaves = params.as_leaves(trainable=True)
                stage = "standardized" if (phase == "bootstrap" and step < standardized_steps) \
                    else "specialized"
                if stage == "standardized":
                    loss, stats = standardized_loss(batch, corpus, leaves, cfg, vocab,
                                                    lam=schedule.flops_weight)
                else:
                    loss, stats = specialized_loss(batch, corpus, leaves, cfg, vocab,
                                                   tau=schedule.tau,
                                                   lam=schedule.flops_weight)
                if not np.isfinite(stats.loss):
                    warnings.warn(f"non-finite loss at step {step}; aborting with last "
                                  "good parameters", RuntimeWarning, stacklevel=2)
                    return False
                ad.backward(loss)
                grads = {name: leaf.grad for name, leaf in leaves.items()}
                optimizer_step(opt, params.arrays, grads)
                step += 1
                log.append(TrainLogRow(step=step, phase=phase, stage=stage,
                                       loss=stats.loss, expert_loss=stats.expert_loss,
                                       mean_weights=stats.mean_weights))
                for qid, wl, wo, wg in stats.instance_weights:
                    inst_weights.append((step, phase, qid, wl, wo, wg))
        return True

    ok = run_epochs(schedule.epochs_bootstrap, "bootstrap", bootstrap_negatives)
    if ok and schedule.epochs_hard > 0:
        queries = {qid: qtext for qid, qtext, _ in pairs}
        mined = mine_hard_negatives(params, cfg, vocab, corpus, queries, relevant,
                                    schedule.mine_depth)
        ok = run_epochs(schedule.epochs_hard, "hard", mined)
    phase = "hard" if schedule.epochs_hard > 0 else "bootstrap"
    return TrainResult(checkpoint=make_checkpoint(phase), log=log,
                       instance_weights=inst_weights, aborted=not ok)
