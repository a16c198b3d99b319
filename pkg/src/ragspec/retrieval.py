"""Build the short drafter context from a long context.

The context is cut into fixed-size chunks, every chunk and the query are
embedded with a hashed bag-of-tokens embedder, and the chunks most similar to
the query are kept subject to a similarity floor and a token budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InputDomainError
from .utils.validation import check_tokens

__all__ = [
    "RetrievalConfig",
    "Chunk",
    "chunk_context",
    "HASH_MULTIPLIER",
    "embed",
    "cosine",
    "retrieval_budget",
    "select_chunks",
    "ChunkRetriever",
    "read_corpus",
    "write_retrieval_trace",
]

# Knuth's multiplicative hashing constant (2**32 / golden ratio).
HASH_MULTIPLIER = 2654435761


@dataclass(frozen=True)
class RetrievalConfig:
    chunk_size: int = 512
    sim_threshold: float = 0.3
    min_budget: int = 4096
    divisor: float = 24.0
    embed_dim: int = 64

    def __post_init__(self):
        if self.chunk_size < 1:
            raise InputDomainError("chunk_size must be >= 1")
        if self.min_budget < self.chunk_size:
            raise InputDomainError("min_budget must be >= chunk_size")
        if not self.divisor > 1:
            raise InputDomainError("divisor must be > 1")
        if not 0.0 <= self.sim_threshold <= 1.0:
            raise InputDomainError("sim_threshold must lie in [0, 1]")
        if self.embed_dim < 1:
            raise InputDomainError("embed_dim must be >= 1")


@dataclass(frozen=True)
class Chunk:
    tokens: tuple
    start_offset: int

    def __len__(self):
        return len(self.tokens)


def chunk_context(C, cfg: RetrievalConfig = RetrievalConfig()) -> list[Chunk]:
    C = check_tokens(C)
    if C.size == 0:
        raise InputDomainError("cannot chunk an empty context")
    n = cfg.chunk_size
    return [Chunk(tuple(int(t) for t in C[i:i + n]), i) for i in range(0, C.size, n)]


def embed(tokens, cfg: RetrievalConfig = RetrievalConfig()) -> np.ndarray:
    """Hashed bag-of-tokens embedding, L2-normalized; empty input gives zeros."""
    tokens = check_tokens(tokens)
    vec = np.zeros(cfg.embed_dim)
    if tokens.size == 0:
        return vec
    buckets = (tokens.astype(np.uint64) * np.uint64(HASH_MULTIPLIER)) & np.uint64(0xFFFFFFFF)
    np.add.at(vec, (buckets % np.uint64(cfg.embed_dim)).astype(np.int64), 1.0)
    return vec / np.linalg.norm(vec)


def cosine(a, b) -> float:
    """Cosine similarity; 0 if either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputDomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def retrieval_budget(context_len: int, cfg: RetrievalConfig = RetrievalConfig()) -> int:
    """Token budget for the retrieved context.

    ``floor(context_len / divisor)``, but never below ``min_budget``. The
    floor wins when the two bounds disagree on short inputs.
    """
    if context_len < 1:
        raise InputDomainError("context_len must be >= 1")
    return max(cfg.min_budget, math.floor(context_len / cfg.divisor))


def _select(scores: np.ndarray, lengths: np.ndarray, budget: int, threshold: float) -> np.ndarray:
    order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
    chosen = np.zeros(scores.size, dtype=bool)
    used = 0
    for i in order:
        if scores[i] < threshold:
            break
        if used + lengths[i] <= budget:
            chosen[i] = True
            used += lengths[i]
    return chosen


def select_chunks(query, C, cfg: RetrievalConfig = RetrievalConfig()) -> np.ndarray:
    """Return the retrieved context for ``query`` as a token array."""
    return ChunkRetriever.from_config(cfg).fit(C).transform([query])[0]


class ChunkRetriever(TransformerMixin, BaseEstimator):
    """Retrieval as a transformer: ``fit`` indexes a context, ``transform``
    maps queries to their retrieved contexts.

    Chunks are ranked by descending cosine score (lower offset first on ties)
    and taken greedily while they fit into the budget; a chunk that does not
    fit is skipped and smaller ones further down may still be taken. The kept
    chunks are stitched back together in document order.

    Parameters
    ----------
    chunk_size, sim_threshold, min_budget, divisor, embed_dim
        See :class:`RetrievalConfig`.
    embedder : callable, optional
        ``embedder(tokens, cfg) -> vector``; defaults to :func:`embed`.

    Attributes
    ----------
    chunks_ : list of Chunk
    embeddings_ : ndarray of shape (n_chunks, embed_dim)
    budget_ : int
    last_trace_ : list of (offset, score, selected)
        Scoring trace of the most recent query passed to ``transform``.
    """

    def __init__(
        self,
        chunk_size: int = 512,
        sim_threshold: float = 0.3,
        min_budget: int = 4096,
        divisor: float = 24.0,
        embed_dim: int = 64,
        embedder: Callable | None = None,
    ):
        self.chunk_size = chunk_size
        self.sim_threshold = sim_threshold
        self.min_budget = min_budget
        self.divisor = divisor
        self.embed_dim = embed_dim
        self.embedder = embedder

    @classmethod
    def from_config(cls, cfg: RetrievalConfig, embedder: Callable | None = None) -> "ChunkRetriever":
        return cls(**asdict(cfg), embedder=embedder)

    @property
    def config(self) -> RetrievalConfig:
        return RetrievalConfig(
            chunk_size=self.chunk_size,
            sim_threshold=self.sim_threshold,
            min_budget=self.min_budget,
            divisor=self.divisor,
            embed_dim=self.embed_dim,
        )

    def fit(self, X, y=None):
        cfg = self.config
        fn = self.embedder or embed
        C = check_tokens(X)
        self.chunks_ = chunk_context(C, cfg)
        self.embeddings_ = np.vstack([fn(c.tokens, cfg) for c in self.chunks_])
        self.context_len_ = int(C.size)
        self.budget_ = retrieval_budget(self.context_len_, cfg)
        return self

    def score(self, query) -> np.ndarray:
        """Cosine score of every chunk against ``query``."""
        check_is_fitted(self, "chunks_")
        fn = self.embedder or embed
        qv = fn(check_tokens(query), self.config)
        return np.array([cosine(qv, e) for e in self.embeddings_])

    def transform(self, X: Sequence) -> list[np.ndarray]:
        check_is_fitted(self, "chunks_")
        out = []
        lengths = np.array([len(c) for c in self.chunks_])
        for query in X:
            scores = self.score(query)
            chosen = _select(scores, lengths, self.budget_, self.sim_threshold)
            self.last_trace_ = [
                (c.start_offset, float(s), bool(k)) for c, s, k in zip(self.chunks_, scores, chosen)
            ]
            parts = [c.tokens for c, k in zip(self.chunks_, chosen) if k]
            out.append(np.array([t for part in parts for t in part], dtype=np.int64))
        return out


def read_corpus(path) -> list[np.ndarray]:
    """One document per non-empty line, token ids separated by whitespace."""
    docs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            docs.append(check_tokens([int(t) for t in line.split()]))
    return docs


def write_retrieval_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chunk_offset", "score", "selected"])
        for offset, score, selected in trace:
            w.writerow([offset, format(score, ".17g"), int(selected)])
