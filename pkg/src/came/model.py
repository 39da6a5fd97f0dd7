"""Bi-encoder backbone: shared bottom transformer stack plus one private
upper stack per expert, all over a single token/position embedding table.

Queries and documents run through the same parameters. Encoding is batched:
sequences are padded to the batch maximum and PAD positions are masked out of
attention, so a padded row never influences a real one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .text import TokenSeq

EXPERT_IDS = ("lex", "loc", "glob")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_shared_layers: int = 2
    n_expert_layers: int = 1
    d_local: int = 32
    max_q_len: int = 16
    max_d_len: int = 64
    d_ff: int = 128

    def validate(self) -> "ModelConfig":
        if self.vocab_size < 3:
            raise ValueError("vocab_size must be >= 3 (reserved ids)")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_shared_layers < 1:
            raise ValueError("n_shared_layers must be >= 1")
        if self.n_expert_layers < 1:
            raise ValueError("n_expert_layers must be >= 1")
        if self.max_q_len < 2 or self.max_d_len < 2:
            raise ValueError("sequence length limits must be >= 2")
        return self

    @property
    def max_len(self) -> int:
        return max(self.max_q_len, self.max_d_len)


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Named deterministic sub-stream of a single master seed."""
    digest = hashlib.sha256(name.encode()).digest()
    sub = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, sub]))


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _block_param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    d, f = cfg.d_model, cfg.d_ff
    return [
        ("attn.wq", (d, d)), ("attn.bq", (d,)),
        ("attn.wk", (d, d)), ("attn.bk", (d,)),
        ("attn.wv", (d, d)), ("attn.bv", (d,)),
        ("attn.wo", (d, d)), ("attn.bo", (d,)),
        ("ln1.g", (d,)), ("ln1.b", (d,)),
        ("ff.w1", (d, f)), ("ff.b1", (f,)),
        ("ff.w2", (f, d)), ("ff.b2", (d,)),
        ("ln2.g", (d,)), ("ln2.b", (d,)),
    ]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    shapes = [
        ("tok_emb", (cfg.vocab_size, cfg.d_model)),
        ("pos_emb", (cfg.max_len, cfg.d_model)),
        ("emb_ln.g", (cfg.d_model,)),
        ("emb_ln.b", (cfg.d_model,)),
    ]
    for i in range(cfg.n_shared_layers):
        shapes += [(f"shared.{i}.{n}", s) for n, s in _block_param_shapes(cfg)]
    for eid in EXPERT_IDS:
        for i in range(cfg.n_expert_layers):
            shapes += [(f"expert.{eid}.{i}.{n}", s) for n, s in _block_param_shapes(cfg)]
    shapes.append(("mlm.bias", (cfg.vocab_size,)))
    shapes.append(("local.w", (cfg.d_model, cfg.d_local)))
    return shapes


@dataclass
class ModelParams:
    """Named float64 arrays; the shared stack is stored once and referenced
    by all three experts."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def as_leaves(self, trainable: bool = True) -> dict[str, ad.Node]:
        wrap = ad.param if trainable else ad.const
        return {name: wrap(arr) for name, arr in self.arrays.items()}


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Truncated-normal weights (sigma 0.02), zero biases, unit norm gains."""
    cfg.validate()
    rng = rng_for(seed, "init")
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg):
        leafname = name.rsplit(".", 1)[-1]
        if leafname in ("g",):
            arrays[name] = np.ones(shape, dtype=np.float64)
        elif leafname in ("b", "bq", "bk", "bv", "bo", "b1", "b2", "bias"):
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            arrays[name] = _trunc_normal(rng, shape)
    return ModelParams(arrays)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def pad_batch(seqs: list[TokenSeq]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, L) ids plus a float mask, padding with PAD=0."""
    L = max(s.length for s in seqs)
    ids = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=np.float64)
    for b, s in enumerate(seqs):
        ids[b, : s.length] = s.ids[: s.length]
        mask[b, : s.length] = 1.0
    return ids, mask


def _transformer_block(x: ad.Node, prefix: str, leaves: dict, mask_bias: np.ndarray,
                       n_heads: int) -> ad.Node:
    def p(name):
        return leaves[f"{prefix}.{name}"]

    q = ad.add(ad.matmul(x, p("attn.wq")), p("attn.bq"))
    k = ad.add(ad.matmul(x, p("attn.wk")), p("attn.bk"))
    v = ad.add(ad.matmul(x, p("attn.wv")), p("attn.bv"))
    attn = ad.attention(q, k, v, n_heads, mask_bias)
    attn = ad.add(ad.matmul(attn, p("attn.wo")), p("attn.bo"))
    x = ad.layer_norm(ad.add(x, attn), p("ln1.g"), p("ln1.b"))
    ff = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, p("ff.w1")), p("ff.b1"))), p("ff.w2")),
                p("ff.b2"))
    return ad.layer_norm(ad.add(x, ff), p("ln2.g"), p("ln2.b"))


def attention_bias(mask: np.ndarray) -> np.ndarray:
    """(B, 1, 1, L) additive bias: BIG_NEG on PAD key positions."""
    return ((1.0 - mask) * ad.BIG_NEG)[:, None, None, :]


def encode_shared(seqs: list[TokenSeq], leaves: dict, cfg: ModelConfig
                  ) -> tuple[ad.Node, np.ndarray]:
    """Embed, add positions, and run the shared stack.

    Returns the (B, L, d) contextual matrix node and the (B, L) mask.
    """
    ids, mask = pad_batch(seqs)
    L = ids.shape[1]
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds configured maximum {cfg.max_len}")
    if int(ids.max()) >= cfg.vocab_size:
        raise ValueError(f"token id {int(ids.max())} out of range for V={cfg.vocab_size}")
    x = ad.embedding(leaves["tok_emb"], ids)
    pos = ad.take(leaves["pos_emb"], np.arange(L), axis=0)
    x = ad.add(x, pos)
    x = ad.layer_norm(x, leaves["emb_ln.g"], leaves["emb_ln.b"])
    bias = attention_bias(mask)
    for i in range(cfg.n_shared_layers):
        x = _transformer_block(x, f"shared.{i}", leaves, bias, cfg.n_heads)
    return x, mask


def encode_expert(expert: str, shared_out: ad.Node, mask: np.ndarray,
                  leaves: dict, cfg: ModelConfig) -> ad.Node:
    """Apply one expert's private upper stack to the shared output."""
    if expert not in EXPERT_IDS:
        raise ValueError(f"unknown expert id {expert!r}; expected one of {EXPERT_IDS}")
    bias = attention_bias(mask)
    x = shared_out
    for i in range(cfg.n_expert_layers):
        x = _transformer_block(x, f"expert.{expert}.{i}", leaves, bias, cfg.n_heads)
    return x
