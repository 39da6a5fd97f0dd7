"""Deterministic synthetic corpora with three planted relevance patterns.

Families (one per query, recorded in metadata):

- exact: the query carries 1-2 rare terms that appear verbatim in its one
  relevant document and nowhere else; topic words are shared with many
  documents, so the rare terms are the only reliable signal.
- scope: the relevant document concatenates one on-topic span with at least
  three spans from filler topics; the query paraphrases the span, mixing
  verbatim topic words with their synonym variants.
- verbosity: the relevant document is entirely about the query's topic but
  written in the synonym variants, so query and document share zero content
  terms; relevance is topical, not lexical.

Synonyms are generated symbol pairs (t03w02a <-> t03w02b), giving exact
control over lexical overlap. Scope and verbosity relevance is topic-level:
every same-family document on the query's topic is relevant (the query's own
document at grade 2, siblings at grade 1). Answer strings are two-token
phrases planted in every relevant document.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Corpus
from .model import rng_for
from .text import split_tokens

FAMILIES = ("exact", "scope", "verbosity")

STOPWORDS = ("the", "of", "and", "to", "a", "in", "is", "on", "for", "with")

ANSWER_ALPHABET_SIZE = 64


class GenError(ValueError):
    pass


def _default_doc_len() -> dict[str, tuple[int, int]]:
    return {"exact": (16, 28), "scope": (48, 72), "verbosity": (24, 40)}


@dataclass
class GenSpec:
    seed: int = 0
    vocab_size: int = 1400
    topic_count: int = 48
    synonym_set_size: int = 6
    docs_per_family: int = 750
    queries_per_family: int = 250
    doc_len: dict[str, tuple[int, int]] = field(default_factory=_default_doc_len)
    distractor_ratio: float = 1.0 / 3.0

    def validate(self) -> "GenSpec":
        if min(self.topic_count, self.synonym_set_size, self.docs_per_family,
               self.queries_per_family) < 1:
            raise GenError("all counts must be >= 1")
        if self.topics_per_family < 1 or self.filler_topics < 3:
            raise GenError(
                f"topic_count={self.topic_count} leaves too few topics: need >= 1 "
                "per family and >= 3 fillers for off-topic spans")
        if self.docs_per_family < self.queries_per_family:
            raise GenError("docs_per_family must cover one relevant doc per query")
        if self.docs_per_family < self.topics_per_family:
            raise GenError("docs_per_family must cover every family topic")
        if self.synonym_set_size < 4:
            raise GenError("synonym_set_size must be >= 4 to compose queries")
        needed = (len(STOPWORDS)
                  + self.topic_count * self.synonym_set_size * 2
                  + 2 * self.queries_per_family
                  + ANSWER_ALPHABET_SIZE)
        if needed > self.vocab_size:
            raise GenError(
                f"vocab_size={self.vocab_size} too small: rare-term disjointness and "
                f"synonym pairs need {needed} distinct tokens")
        n_answers = self.queries_per_family + 2 * self.topics_per_family
        if n_answers > ANSWER_ALPHABET_SIZE * ANSWER_ALPHABET_SIZE:
            raise GenError("answer alphabet exhausted; reduce query/topic counts")
        for fam in FAMILIES:
            lo, hi = self.doc_len[fam]
            if lo < 8 or hi < lo:
                raise GenError(f"doc_len[{fam!r}]=({lo},{hi}) invalid")
        return self

    @property
    def topics_per_family(self) -> int:
        return self.topic_count // 4

    @property
    def filler_topics(self) -> int:
        return self.topic_count - 3 * self.topics_per_family

    def family_topics(self, family: str) -> list[int]:
        i = FAMILIES.index(family)
        start = i * self.topics_per_family
        return list(range(start, start + self.topics_per_family))

    def filler_topic_ids(self) -> list[int]:
        return list(range(3 * self.topics_per_family, self.topic_count))


@dataclass
class Dataset:
    corpus: Corpus
    queries: dict[str, str]
    qrels: dict[str, dict[str, int]]
    answers: dict[str, list[str]]
    families: dict[str, str]


def topic_word(topic: int, word: int, variant: str) -> str:
    return f"t{topic:02d}w{word:02d}{variant}"


def token_topic(token: str) -> int | None:
    """Parse the topic id back out of a generated topic token, else None."""
    if len(token) >= 7 and token[0] == "t" and token[3] == "w" and token[-1] in "ab":
        try:
            return int(token[1:3])
        except ValueError:
            return None
    return None


def _answer_phrase(index: int) -> str:
    a, b = divmod(index, ANSWER_ALPHABET_SIZE)
    return f"ans{a:03d} ans{b:03d}"


def _compose(rng: np.random.Generator, words: list[str], stop_ratio: float = 0.25) -> list[str]:
    out = []
    for w in words:
        if rng.random() < stop_ratio:
            out.append(STOPWORDS[int(rng.integers(len(STOPWORDS)))])
        out.append(w)
    return out


def _sample_topic_words(rng: np.random.Generator, spec: GenSpec, topic: int, n: int,
                        variant: str) -> list[str]:
    picks = rng.integers(0, spec.synonym_set_size, size=n)
    return [topic_word(topic, int(w), variant) for w in picks]


def generate(spec: GenSpec) -> Dataset:
    """Build the corpus, queries, qrels, answers and family labels."""
    spec.validate()
    rng = rng_for(spec.seed, "synthgen")
    docs: list[str] = []  # texts in creation order; ids assigned after shuffling
    doc_tags: list[tuple] = []  # parallel structural tag per doc
    queries: dict[str, str] = {}
    families: dict[str, str] = {}
    answers: dict[str, list[str]] = {}
    rel_pairs: list[tuple[str, int, int]] = []  # (qid, doc creation index, grade)
    answer_cursor = 0

    def next_answer() -> str:
        nonlocal answer_cursor
        phrase = _answer_phrase(answer_cursor)
        answer_cursor += 1
        return phrase

    # --- exact family: unique rare terms bind query and document -----------
    topics = spec.family_topics("exact")
    lo, hi = spec.doc_len["exact"]
    rare_cursor = 0
    for i in range(spec.queries_per_family):
        qid = f"qx{i:04d}"
        topic = topics[i % len(topics)]
        n_rare = 1 + int(rng.integers(2))  # 1 or 2
        rares = [f"rare{rare_cursor + j:04d}" for j in range(n_rare)]
        rare_cursor += n_rare
        q_words = _sample_topic_words(rng, spec, topic, 2 + int(rng.integers(2)), "a")
        queries[qid] = " ".join(_compose(rng, q_words + rares, stop_ratio=0.3))
        families[qid] = "exact"
        answer = next_answer()
        answers[qid] = [answer]
        n_words = int(rng.integers(lo, hi + 1))
        body = _sample_topic_words(rng, spec, topic, n_words, "a")
        for r in rares:
            body.insert(int(rng.integers(len(body) + 1)), r)
        text = " ".join(_compose(rng, body) + answer.split())
        rel_pairs.append((qid, len(docs), 2))
        docs.append(text)
        doc_tags.append(("exact", topic, True))
    # extra exact-style docs without rare terms (topical hard negatives)
    for i in range(spec.docs_per_family - spec.queries_per_family):
        topic = topics[i % len(topics)]
        n_words = int(rng.integers(lo, hi + 1))
        body = _sample_topic_words(rng, spec, topic, n_words, "a")
        docs.append(" ".join(_compose(rng, body)))
        doc_tags.append(("exact", topic, False))

    # --- scope family: one relevant span inside filler spans ---------------
    topics = spec.family_topics("scope")
    fillers = spec.filler_topic_ids()
    lo, hi = spec.doc_len["scope"]
    scope_answers = {t: next_answer() for t in topics}
    for i in range(spec.docs_per_family):
        topic = topics[i % len(topics)]
        n_words = int(rng.integers(lo, hi + 1))
        n_spans = 4 + int(rng.integers(3))  # 1 on-topic + 3..5 off-topic
        span_len = max(4, n_words // n_spans)
        on_span = _sample_topic_words(rng, spec, topic, span_len, "a")
        on_span += scope_answers[topic].split()
        off_ids = rng.choice(len(fillers), size=n_spans - 1, replace=False)
        spans = [_sample_topic_words(rng, spec, fillers[int(f)], span_len, "a")
                 for f in off_ids]
        spans.insert(int(rng.integers(n_spans)), on_span)
        words = [w for span in spans for w in span]
        docs.append(" ".join(_compose(rng, words, stop_ratio=0.15)))
        doc_tags.append(("scope", topic, True))
    for i in range(spec.queries_per_family):
        qid = f"qs{i:04d}"
        topic = topics[i % len(topics)]
        n_words = 4 + int(rng.integers(3))
        picks = rng.integers(0, spec.synonym_set_size, size=n_words)
        variants = rng.random(n_words) < 0.5
        q_words = [topic_word(topic, int(w), "a" if v else "b")
                   for w, v in zip(picks, variants)]
        queries[qid] = " ".join(_compose(rng, q_words, stop_ratio=0.2))
        families[qid] = "scope"
        answers[qid] = [scope_answers[topic]]

    # --- verbosity family: whole-document paraphrase, zero overlap ---------
    topics = spec.family_topics("verbosity")
    lo, hi = spec.doc_len["verbosity"]
    verb_answers = {t: next_answer() for t in topics}
    for i in range(spec.docs_per_family):
        topic = topics[i % len(topics)]
        n_words = int(rng.integers(lo, hi + 1))
        body = _sample_topic_words(rng, spec, topic, n_words, "b")
        text = " ".join(_compose(rng, body) + verb_answers[topic].split())
        docs.append(text)
        doc_tags.append(("verbosity", topic, True))
    for i in range(spec.queries_per_family):
        qid = f"qv{i:04d}"
        topic = topics[i % len(topics)]
        q_words = _sample_topic_words(rng, spec, topic, 3 + int(rng.integers(3)), "a")
        queries[qid] = " ".join(_compose(rng, q_words, stop_ratio=0.3))
        families[qid] = "verbosity"
        answers[qid] = [verb_answers[topic]]

    # --- distractors from filler topics -------------------------------------
    n_distract = round(spec.distractor_ratio * 3 * spec.docs_per_family)
    for i in range(n_distract):
        topic = fillers[i % len(fillers)]
        n_words = int(rng.integers(16, 48))
        variant = "a" if rng.random() < 0.5 else "b"
        body = _sample_topic_words(rng, spec, topic, n_words, variant)
        docs.append(" ".join(_compose(rng, body)))
        doc_tags.append(("distractor", topic, False))

    # --- assemble: shuffle creation order into stable ids -------------------
    perm = rng.permutation(len(docs))
    creation_to_id = {}
    texts: dict[str, str] = {}
    for new_pos, creation_idx in enumerate(perm):
        doc_id = f"d{new_pos:05d}"
        creation_to_id[int(creation_idx)] = doc_id
        texts[doc_id] = docs[int(creation_idx)]
    corpus = Corpus(texts)

    qrels: dict[str, dict[str, int]] = {qid: {} for qid in queries}
    for qid, creation_idx, grade in rel_pairs:
        qrels[qid][creation_to_id[creation_idx]] = grade
    # topic-level relevance for scope and verbosity
    by_family_topic: dict[tuple, list[str]] = {}
    for creation_idx, (fam, topic, relevant) in enumerate(doc_tags):
        if fam in ("scope", "verbosity") and relevant:
            by_family_topic.setdefault((fam, topic), []).append(
                creation_to_id[creation_idx])
    own_doc: dict[str, str] = {}
    for fam in ("scope", "verbosity"):
        spec_topics = spec.family_topics(fam)
        fam_docs = {t: sorted(by_family_topic.get((fam, t), [])) for t in spec_topics}
        prefix = "qs" if fam == "scope" else "qv"
        for i in range(spec.queries_per_family):
            qid = f"{prefix}{i:04d}"
            topic = spec_topics[i % len(spec_topics)]
            docs_t = fam_docs[topic]
            own = docs_t[i // len(spec_topics) % len(docs_t)]
            own_doc[qid] = own
            for d in docs_t:
                qrels[qid][d] = 2 if d == own else 1
    for qid, rels in qrels.items():
        if not rels:
            raise GenError(f"query {qid!r} generated without a relevant document")

    return Dataset(corpus=corpus, queries=queries, qrels=qrels, answers=answers,
                   families=families)


def primary_positive(ds: Dataset, qid: str) -> str:
    """The grade-2 document generated for this query (first by id on ties)."""
    best = max(ds.qrels[qid].items(), key=lambda kv: (kv[1], kv[0]))
    top_grade = best[1]
    return min(d for d, g in ds.qrels[qid].items() if g == top_grade)


# ---------------------------------------------------------------------------
# Independent constraint checker
# ---------------------------------------------------------------------------


def _content_terms(text: str) -> set[str]:
    return {t for t in split_tokens(text) if t not in STOPWORDS}


def validate_dataset(ds: Dataset) -> list[str]:
    """Post-hoc checks of the construction constraints from the artifacts
    alone (token naming carries the topic structure). Returns violations."""
    problems = []
    rare_locations: dict[str, list[str]] = {}
    for doc_id, text in ds.corpus.texts.items():
        for tok in split_tokens(text):
            if tok.startswith("rare"):
                rare_locations.setdefault(tok, []).append(doc_id)
    for qid, family in ds.families.items():
        qtext = ds.queries[qid]
        rel = {d for d, g in ds.qrels.get(qid, {}).items() if g > 0}
        if not rel:
            problems.append(f"{qid}: no relevant document")
            continue
        if family == "exact":
            rares = [t for t in split_tokens(qtext) if t.startswith("rare")]
            if not 1 <= len(rares) <= 2:
                problems.append(f"{qid}: expected 1-2 rare terms, found {len(rares)}")
            for r in rares:
                homes = set(rare_locations.get(r, []))
                if homes != rel:
                    problems.append(
                        f"{qid}: rare term {r} appears in {sorted(homes)} "
                        f"instead of exactly {sorted(rel)}")
        elif family == "verbosity":
            q_terms = _content_terms(qtext)
            for d in rel:
                shared = q_terms & _content_terms(ds.corpus[d])
                if shared:
                    problems.append(f"{qid}: shares content terms {sorted(shared)} with {d}")
        elif family == "scope":
            q_topics = {token_topic(t) for t in split_tokens(qtext)} - {None}
            if len(q_topics) != 1:
                problems.append(f"{qid}: query spans topics {sorted(q_topics)}")
                continue
            (topic,) = q_topics
            for d in rel:
                d_topics = {token_topic(t) for t in split_tokens(ds.corpus[d])} - {None}
                if topic not in d_topics:
                    problems.append(f"{qid}: relevant {d} lacks on-topic span")
                if len(d_topics - {topic}) < 3:
                    problems.append(f"{qid}: relevant {d} has fewer than 3 off-topic spans")
        if not ds.answers.get(qid):
            problems.append(f"{qid}: no answer string")
        else:
            planted = [a for a in ds.answers[qid]
                       if any(a in ds.corpus[d].lower() for d in rel)]
            if not planted:
                problems.append(f"{qid}: answer not planted in any relevant document")
    return problems
