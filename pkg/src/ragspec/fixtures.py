"""Small canned scenarios used by the CLI and the test-suite.

The needle scenario plants a fact (a trigger bigram answered by ``GOLD``) in
one chunk of an otherwise filler context. The target sees the whole context
but is only moderately sure of the answer; the drafter is confident whenever
the trigger is in its retrieved context. The unrelated variant feeds the
drafter a chunk from another document whose trigger points at ``WRONG``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lm import ContextOracleLM, NGramLM, TableLM
from .retrieval import RetrievalConfig

VOCAB = 32
GOLD = 1
WRONG = 2
KEYS = (20, 21, 22, 23)
TRIGGER = (24, 25)
DISTRACTOR_TRIGGER = (26, 27)
FILLER = tuple(range(3, 16))

TARGET_CONFIDENCE = 0.5
DRAFTER_CONFIDENCE = 0.95

NEEDLE_RETRIEVAL = RetrievalConfig(chunk_size=16, sim_threshold=0.3, min_budget=16, divisor=24.0, embed_dim=64)


@dataclass(frozen=True)
class Scenario:
    target: object
    drafter: object
    context: np.ndarray
    query: np.ndarray
    retrieval: RetrievalConfig
    gold: int | None = None
    retrieval_source: np.ndarray | None = None

    @property
    def drafter_corpus(self) -> np.ndarray:
        """Document the drafter's context is retrieved from."""
        return self.context if self.retrieval_source is None else self.retrieval_source


def _document(seed: int, n_chunks: int, needle_chunk: int, trigger) -> np.ndarray:
    rng = np.random.default_rng(seed)
    size = NEEDLE_RETRIEVAL.chunk_size
    doc = rng.choice(FILLER, size=n_chunks * size)
    needle = np.array((KEYS + tuple(trigger)) * 3, dtype=np.int64)[:size]
    doc[needle_chunk * size:(needle_chunk + 1) * size] = needle
    return doc.astype(np.int64)


def needle_backends():
    uniform = np.full(VOCAB, 1.0 / VOCAB)
    target = ContextOracleLM(VOCAB, [(TRIGGER, GOLD, TARGET_CONFIDENCE)], uniform)
    drafter = ContextOracleLM(
        VOCAB,
        [(TRIGGER, GOLD, DRAFTER_CONFIDENCE), (DISTRACTOR_TRIGGER, WRONG, DRAFTER_CONFIDENCE)],
        uniform,
    )
    return target, drafter


def needle_scenario(n_chunks: int = 24, needle_chunk: int = 13) -> Scenario:
    target, drafter = needle_backends()
    return Scenario(
        target=target,
        drafter=drafter,
        context=_document(7, n_chunks, needle_chunk, TRIGGER),
        query=np.array(KEYS, dtype=np.int64),
        retrieval=NEEDLE_RETRIEVAL,
        gold=GOLD,
    )


def unrelated_scenario(n_chunks: int = 24) -> Scenario:
    """Needle scenario whose drafter retrieves from a different document."""
    base = needle_scenario(n_chunks)
    other = _document(11, n_chunks, 4, DISTRACTOR_TRIGGER)
    return Scenario(
        target=base.target,
        drafter=base.drafter,
        context=base.context,
        query=base.query,
        retrieval=base.retrieval,
        gold=GOLD,
        retrieval_source=other,
    )


def self_speculation_scenario(seed: int = 0, vocab: int = 6) -> Scenario:
    """Drafter identical to the target and reading the same context."""
    rng = np.random.default_rng(seed)
    corpus = [rng.integers(0, vocab, size=40) for _ in range(5)]
    lm = NGramLM.from_sequences(vocab, 2, corpus, smoothing=0.5)
    context = rng.integers(0, vocab, size=64).astype(np.int64)
    return Scenario(
        target=lm,
        drafter=lm,
        context=context,
        query=np.array([1, 2], dtype=np.int64),
        retrieval=RetrievalConfig(chunk_size=64, sim_threshold=0.0, min_budget=64, divisor=24.0, embed_dim=64),
    )


def table_pair(seed: int = 0, vocab: int = 4, order: int = 1):
    """Random target/drafter ``TableLM`` pair covering every window of ``order`` tokens."""
    rng = np.random.default_rng(seed)
    import itertools

    windows = list(itertools.product(range(vocab), repeat=order))

    def make():
        table = {w: rng.dirichlet(np.ones(vocab)) for w in windows}
        return TableLM(vocab, order, table, np.full(vocab, 1.0 / vocab))

    return make(), make()
