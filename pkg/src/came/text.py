"""Tokenization and vocabulary handling.

Lowercased word tokenization (alphanumeric + underscore runs); the vocabulary
is built from a corpus with three reserved ids in front. Vocab files carry one
token per line, so id = line number + 3.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

PAD_ID = 0
CLS_ID = 1
UNK_ID = 2
N_RESERVED = 3

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def split_tokens(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.token_to_id.values())) != len(self.token_to_id):
            raise ValueError("vocab ids must be unique")

    @property
    def size(self) -> int:
        return N_RESERVED + len(self.token_to_id)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    @classmethod
    def build(cls, texts) -> "Vocab":
        """Collect the sorted set of tokens across texts."""
        tokens = set()
        for text in texts:
            tokens.update(split_tokens(text))
        return cls({tok: N_RESERVED + i for i, tok in enumerate(sorted(tokens))})

    def save(self, path) -> None:
        ordered = sorted(self.token_to_id, key=self.token_to_id.get)
        with open(path, "w", encoding="utf-8") as fh:
            for tok in ordered:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls({tok: N_RESERVED + i for i, tok in enumerate(tokens)})


@dataclass
class TokenSeq:
    """Token ids with a leading CLS; `length` counts real (non-PAD) ids."""

    ids: np.ndarray
    length: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(len(self.ids), dtype=np.float64)
        m[: self.length] = 1.0
        return m


def tokenize(text: str, max_len: int, vocab: Vocab) -> TokenSeq:
    """CLS-prefixed id sequence, truncated to max_len; unknown tokens -> UNK."""
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    ids = [CLS_ID] + [vocab.lookup(tok) for tok in split_tokens(text)]
    ids = ids[:max_len]
    return TokenSeq(ids=np.asarray(ids, dtype=np.int64), length=len(ids))
