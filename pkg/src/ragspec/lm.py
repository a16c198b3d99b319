"""Token-level language model backends.

Every backend maps a context of token ids to a vector of logits over a shared
vocabulary. The three concrete backends are exact-arithmetic stand-ins for a
large model: their logits are log-probabilities, so ``softmax(logits)`` at
temperature 1 gives back the distribution they were built from.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ConfigurationError, InputDomainError
from .utils.validation import check_prob_vector, check_tokens

__all__ = [
    "LOG_ZERO",
    "Vocab",
    "LMBackend",
    "TableLM",
    "NGramLM",
    "ContextOracleLM",
    "dumps",
    "loads",
    "save",
    "load",
]

# Stand-in for log(0): finite, and exp() of it underflows to exactly 0.
LOG_ZERO = -1e30


def _log_probs(p: np.ndarray) -> np.ndarray:
    out = np.full(p.shape, LOG_ZERO)
    pos = p > 0
    out[pos] = np.log(p[pos])
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Vocab:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise InputDomainError(f"vocabulary size must be an integer >= 2, got {self.size!r}")


class LMBackend(ABC):
    """Conditional next-token distribution provider.

    ``logits`` is a pure function of the context. When ``context_window`` is
    set, only the most recent ``context_window`` tokens are visible.
    """

    kind: str = ""

    def __init__(self, vocab: Vocab | int, context_window: int | None = None):
        self.vocab = vocab if isinstance(vocab, Vocab) else Vocab(int(vocab))
        if context_window is not None and context_window < 1:
            raise InputDomainError("context_window must be a positive integer")
        self.context_window = context_window

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def _visible(self, ctx: np.ndarray) -> np.ndarray:
        if self.context_window is not None and ctx.size > self.context_window:
            return ctx[-self.context_window:]
        return ctx

    def logits(self, ctx) -> np.ndarray:
        ctx = check_tokens(ctx, self.vocab_size)
        return self._logits(self._visible(ctx)).copy()

    def logits_batch(self, prefix, candidates) -> list[np.ndarray]:
        """Logits at every candidate position in one call.

        ``result[k]`` is the next-token logits after ``prefix + candidates[:k]``,
        which is what a verifier needs to score each drafted token.
        """
        prefix = check_tokens(prefix, self.vocab_size)
        candidates = check_tokens(candidates, self.vocab_size)
        if candidates.size == 0:
            raise InputDomainError("logits_batch needs at least one candidate")
        return self._logits_batch(prefix, candidates)

    def _logits_batch(self, prefix: np.ndarray, candidates: np.ndarray) -> list[np.ndarray]:
        full = np.concatenate([prefix, candidates])
        n = prefix.size
        return [self._logits(self._visible(full[: n + k])).copy() for k in range(candidates.size)]

    def probs(self, ctx, T: float = 1.0) -> np.ndarray:
        from .sampling import softmax_t

        return softmax_t(self.logits(ctx), T)

    @abstractmethod
    def _logits(self, ctx: np.ndarray) -> np.ndarray:
        ...

    def __eq__(self, other):
        return type(self) is type(other) and dumps(self) == dumps(other)

    def __hash__(self):
        return hash(dumps(self))


class _WindowLM(LMBackend):
    """Backend keyed on the last ``order`` tokens."""

    def __init__(self, vocab, order: int, context_window: int | None = None):
        super().__init__(vocab, context_window)
        if order < 0:
            raise InputDomainError("order must be >= 0")
        self.order = int(order)

    def _key(self, ctx: np.ndarray) -> tuple:
        if self.order == 0:
            return ()
        return tuple(int(t) for t in ctx[-self.order:])

    def _logits_batch(self, prefix, candidates):
        full = np.concatenate([prefix, candidates])
        m = self.order
        if self.context_window is not None:
            m = min(m, self.context_window)
        out = []
        for k in range(candidates.size):
            end = prefix.size + k
            key = tuple(int(t) for t in full[max(0, end - m):end]) if m else ()
            out.append(self._lookup(key).copy())
        return out

    def _logits(self, ctx):
        return self._lookup(self._key(ctx))

    @abstractmethod
    def _lookup(self, key: tuple) -> np.ndarray:
        ...


class TableLM(_WindowLM):
    """Explicit table from the last ``order`` tokens to a next-token distribution.

    Contexts whose window is not in the table get ``fallback``.
    """

    kind = "table"

    def __init__(
        self,
        vocab,
        order: int,
        table: Mapping[Sequence[int], Sequence[float]],
        fallback: Sequence[float],
        context_window: int | None = None,
    ):
        super().__init__(vocab, order, context_window)
        V = self.vocab_size
        self.fallback = _frozen(check_prob_vector(fallback, size=V))
        self.table = {}
        for window, p in table.items():
            key = tuple(int(t) for t in window)
            check_tokens(key, V)
            self.table[key] = _frozen(check_prob_vector(p, size=V))
        self._table_logits = {k: _frozen(_log_probs(v)) for k, v in self.table.items()}
        self._fallback_logits = _frozen(_log_probs(self.fallback))

    def _lookup(self, key):
        return self._table_logits.get(key, self._fallback_logits)

    @classmethod
    def point_mass(cls, vocab, token: int, context_window: int | None = None) -> "TableLM":
        """A backend that always predicts ``token``."""
        V = vocab.size if isinstance(vocab, Vocab) else int(vocab)
        p = np.zeros(V)
        p[token] = 1.0
        return cls(V, 0, {}, p, context_window=context_window)


class NGramLM(_WindowLM):
    """Count-based model with add-k smoothing over the last ``order`` tokens."""

    kind = "ngram"

    def __init__(
        self,
        vocab,
        order: int,
        counts: Mapping[Sequence[int], Sequence[float]] | None = None,
        smoothing: float = 1.0,
        context_window: int | None = None,
    ):
        super().__init__(vocab, order, context_window)
        if not smoothing > 0:
            raise InputDomainError("smoothing must be > 0")
        self.smoothing = float(smoothing)
        V = self.vocab_size
        self.counts = {}
        for window, c in (counts or {}).items():
            key = tuple(int(t) for t in window)
            check_tokens(key, V)
            c = np.asarray(c, dtype=np.float64)
            if c.shape != (V,) or np.any(c < 0):
                raise InputDomainError(f"counts for window {key} must be {V} non-negative values")
            self.counts[key] = _frozen(c)
        self._cache = {k: _frozen(_log_probs(self._smoothed(c))) for k, c in self.counts.items()}
        self._unseen = _frozen(np.full(V, -math.log(V)))

    def _smoothed(self, c: np.ndarray) -> np.ndarray:
        k = self.smoothing
        return (c + k) / (c.sum() + k * self.vocab_size)

    def _lookup(self, key):
        return self._cache.get(key, self._unseen)

    @classmethod
    def from_sequences(
        cls, vocab, order: int, sequences: Iterable[Sequence[int]], smoothing: float = 1.0, **kw
    ) -> "NGramLM":
        V = vocab.size if isinstance(vocab, Vocab) else int(vocab)
        counts: dict[tuple, np.ndarray] = {}
        for seq in sequences:
            seq = check_tokens(seq, V)
            for i in range(order, seq.size):
                key = tuple(int(t) for t in seq[i - order:i])
                counts.setdefault(key, np.zeros(V))[seq[i]] += 1
        return cls(V, order, counts, smoothing, **kw)


class ContextOracleLM(LMBackend):
    """Answers a fact whenever its trigger appears in the context.

    ``patterns`` are ``(trigger, answer, confidence)`` triples checked in
    order; the first trigger found anywhere in the visible context puts
    ``confidence`` on ``answer`` and spreads the rest over the other tokens in
    proportion to ``base``. Without a match the output is ``base``.
    """

    kind = "oracle"

    def __init__(
        self,
        vocab,
        patterns: Sequence[tuple[Sequence[int], int, float]],
        base: Sequence[float],
        context_window: int | None = None,
    ):
        super().__init__(vocab, context_window)
        V = self.vocab_size
        self.base = _frozen(check_prob_vector(base, size=V))
        self.patterns = []
        self._answer_logits = []
        for trigger, answer, conf in patterns:
            trig = tuple(int(t) for t in check_tokens(trigger, V))
            if not trig:
                raise InputDomainError("trigger must be non-empty")
            answer = int(answer)
            check_tokens([answer], V)
            conf = float(conf)
            if not 0.0 < conf < 1.0:
                raise InputDomainError("confidence must lie in (0, 1)")
            rest = self.base.copy()
            rest[answer] = 0.0
            if rest.sum() <= 0:
                raise InputDomainError("base has no mass outside the answer token")
            p = rest * ((1.0 - conf) / rest.sum())
            p[answer] = conf
            self.patterns.append((trig, answer, conf))
            self._answer_logits.append(_frozen(_log_probs(p)))
        self._base_logits = _frozen(_log_probs(self.base))

    def _logits(self, ctx):
        seq = [int(t) for t in ctx]
        for (trig, _, _), lg in zip(self.patterns, self._answer_logits):
            m = len(trig)
            if any(tuple(seq[i:i + m]) == trig for i in range(len(seq) - m + 1)):
                return lg
        return self._base_logits

    def _logits_batch(self, prefix, candidates):
        full = np.concatenate([prefix, candidates])
        W = self.context_window
        # earliest-ending occurrence of each trigger that starts at or after s
        starts = []
        for trig, _, _ in self.patterns:
            m = len(trig)
            if full.size >= m:
                windows = np.lib.stride_tricks.sliding_window_view(full, m)
                starts.append(np.flatnonzero(np.all(windows == np.array(trig), axis=1)))
            else:
                starts.append(np.zeros(0, dtype=np.int64))
        out = []
        for k in range(candidates.size):
            end = prefix.size + k
            s = 0 if W is None else max(0, end - W)
            lg = self._base_logits
            for (trig, _, _), st, alg in zip(self.patterns, starts, self._answer_logits):
                ok = st[(st >= s) & (st + len(trig) <= end)]
                if ok.size:
                    lg = alg
                    break
            out.append(lg.copy())
        return out


# -- serialization ----------------------------------------------------------
#
# header:  <kind> <|V|> <order> <smoothing> [window=<W>]
# records: <window ids | '-' for empty | '*' for fallback/base> '|' <values>
# oracle records: <trigger ids> '|' <answer> <confidence>

def _fmt(x: float) -> str:
    return repr(float(x))


def _window(key: tuple) -> str:
    return " ".join(str(t) for t in key) if key else "-"


def dumps(backend: LMBackend) -> str:
    V = backend.vocab_size
    if isinstance(backend, TableLM):
        header = ["table", V, backend.order, 0]
    elif isinstance(backend, NGramLM):
        header = ["ngram", V, backend.order, _fmt(backend.smoothing)]
    elif isinstance(backend, ContextOracleLM):
        header = ["oracle", V, 0, 0]
    else:
        raise ConfigurationError(f"cannot serialize backend of type {type(backend).__name__}")
    if backend.context_window is not None:
        header.append(f"window={backend.context_window}")
    lines = [" ".join(str(h) for h in header)]
    if isinstance(backend, TableLM):
        lines.append("* | " + " ".join(_fmt(v) for v in backend.fallback))
        for key in sorted(backend.table):
            lines.append(f"{_window(key)} | " + " ".join(_fmt(v) for v in backend.table[key]))
    elif isinstance(backend, NGramLM):
        for key in sorted(backend.counts):
            lines.append(f"{_window(key)} | " + " ".join(_fmt(v) for v in backend.counts[key]))
    else:
        lines.append("* | " + " ".join(_fmt(v) for v in backend.base))
        for trig, answer, conf in backend.patterns:
            lines.append(f"{_window(trig)} | {answer} {_fmt(conf)}")
    return "\n".join(lines) + "\n"


def _parse_window(text: str) -> tuple:
    text = text.strip()
    if text == "-":
        return ()
    return tuple(int(t) for t in text.split())


def loads(text: str) -> LMBackend:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InputDomainError("empty backend description")
    head = lines[0].split()
    if len(head) < 4:
        raise InputDomainError(f"malformed header: {lines[0]!r}")
    kind, V, order, smoothing = head[0], int(head[1]), int(head[2]), float(head[3])
    window = None
    for extra in head[4:]:
        name, _, value = extra.partition("=")
        if name != "window":
            raise InputDomainError(f"unknown header field {extra!r}")
        window = int(value)
    records = []
    for ln in lines[1:]:
        left, sep, right = ln.partition("|")
        if not sep:
            raise InputDomainError(f"malformed record: {ln!r}")
        records.append((left.strip(), [float(v) for v in right.split()], right.split()))
    if kind == "table":
        fallback = None
        table = {}
        for left, vals, _ in records:
            if left == "*":
                fallback = vals
            else:
                table[_parse_window(left)] = vals
        if fallback is None:
            raise InputDomainError("table backend without a fallback record")
        return TableLM(V, order, table, fallback, context_window=window)
    if kind == "ngram":
        counts = {_parse_window(left): vals for left, vals, _ in records}
        return NGramLM(V, order, counts, smoothing, context_window=window)
    if kind == "oracle":
        base = None
        patterns = []
        for left, vals, raw in records:
            if left == "*":
                base = vals
            else:
                patterns.append((_parse_window(left), int(raw[0]), float(raw[1])))
        if base is None:
            raise InputDomainError("oracle backend without a base record")
        return ContextOracleLM(V, patterns, base, context_window=window)
    raise InputDomainError(f"unknown backend kind {kind!r}")


def save(backend: LMBackend, path) -> None:
    Path(path).write_text(dumps(backend))


def load(path) -> LMBackend:
    return loads(Path(path).read_text())
