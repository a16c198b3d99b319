"""Speculative decoding with a retrieval-conditioned drafter.

One step drafts ``gamma`` tokens from the drafter on ``[C_S; prefix]``, then
checks them in order against the target on ``[C; prefix]``. The target
distribution used for the check is shifted toward the drafter by one
distillation step on the logits (strength ``eta``), with tail entries restored
to the unshifted target. The first rejected position is resampled from the
residual ``max(p - p_hat, p - q, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, DegenerateResidualError, InputDomainError, InvariantBreach
from .lm import LMBackend
from .sampling import RngStream, inverse_cdf, norm_clamped, sample_categorical, softmax_t
from .utils.validation import check_temperature, check_tokens

__all__ = [
    "EngineConfig",
    "StepTrace",
    "GenerationStats",
    "draft_block",
    "augment_logits",
    "tail_preserve",
    "retrieval_augmented_target",
    "accept_ratio",
    "residual_distribution",
    "residual_sample",
    "verify_block",
    "single_position_step",
    "generate",
    "RapidDecoder",
    "ETA_GRID",
]

# Sweep grid for the transfer strength.
ETA_GRID = (0.0, 5.0, 10.0, 20.0, 40.0, 50.0)


@dataclass(frozen=True)
class EngineConfig:
    gamma: int = 10
    eta: float = 0.0
    temperature: float = 1.0
    tail_factor: float = 0.1
    max_tokens: int = 32
    seed: int = 0
    bonus_token: bool = False

    def __post_init__(self):
        if self.gamma < 1:
            raise InputDomainError("gamma must be >= 1")
        if not self.eta >= 0:
            raise InputDomainError("eta must be >= 0")
        check_temperature(self.temperature)
        if not 0.0 < self.tail_factor < 1.0:
            raise InputDomainError("tail_factor must lie in (0, 1)")
        if self.max_tokens < 0:
            raise InputDomainError("max_tokens must be >= 0")


@dataclass
class StepTrace:
    drafted: list
    draft_probs: list
    accepted_count: int
    correction_token: int | None = None
    p_vec: list | None = None
    p_hat_vec: list | None = None
    q_vec: list | None = None
    acceptance_randoms: list = field(default_factory=list)
    bonus_token: int | None = None

    @property
    def emitted(self) -> list:
        out = list(self.drafted[: self.accepted_count])
        if self.correction_token is not None:
            out.append(self.correction_token)
        if self.bonus_token is not None:
            out.append(self.bonus_token)
        return out

    def to_dict(self) -> dict:
        return {
            "drafted": list(self.drafted),
            "draft_probs": [list(map(float, v)) for v in self.draft_probs],
            "accepted_count": self.accepted_count,
            "correction_token": self.correction_token,
            "p_vec": self.p_vec,
            "p_hat_vec": self.p_hat_vec,
            "q_vec": self.q_vec,
            "acceptance_randoms": list(self.acceptance_randoms),
            "bonus_token": self.bonus_token,
        }


@dataclass
class GenerationStats:
    total_drafted: int = 0
    total_accepted: int = 0
    steps: int = 0
    tokens_emitted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.total_accepted / self.total_drafted if self.total_drafted else 0.0

    def to_dict(self) -> dict:
        return {
            "total_drafted": self.total_drafted,
            "total_accepted": self.total_accepted,
            "steps": self.steps,
            "acceptance_rate": self.acceptance_rate,
            "tokens_emitted": self.tokens_emitted,
        }


def draft_block(drafter: LMBackend, C_S, prefix, gamma: int, T: float, rng: RngStream):
    """Sample ``gamma`` tokens autoregressively from the drafter.

    Returns the tokens and the full drafter distribution at each position.
    """
    if gamma < 1:
        raise InputDomainError("gamma must be >= 1")
    ctx = list(check_tokens(C_S)) + list(check_tokens(prefix))
    tokens, probs = [], []
    for _ in range(gamma):
        q = softmax_t(drafter.logits(ctx), T)
        x = sample_categorical(q, rng)
        tokens.append(x)
        probs.append(q)
        ctx.append(x)
    return tokens, probs


def augment_logits(z, p, q, eta: float, T: float) -> np.ndarray:
    """``z + eta * T * (q - p)``: one distillation step toward ``q``."""
    z = np.asarray(z, dtype=np.float64)
    return z + eta * T * (np.asarray(q, dtype=np.float64) - np.asarray(p, dtype=np.float64))


def tail_preserve(p, p_hat_raw, alpha: float = 0.1) -> np.ndarray:
    """Restore the target's value wherever the shifted distribution is small.

    Entries of ``p_hat_raw`` below ``alpha * max(p_hat_raw)`` are replaced by
    the corresponding entries of ``p`` and the result is L1-renormalized. If
    the replacement changes nothing, ``p_hat_raw`` is returned as is.
    """
    if not 0.0 < alpha < 1.0:
        raise InputDomainError("alpha must lie in (0, 1)")
    p = np.asarray(p, dtype=np.float64)
    raw = np.asarray(p_hat_raw, dtype=np.float64)
    tail = raw < alpha * raw.max()
    out = np.where(tail, p, raw)
    if np.array_equal(out, raw):
        return raw.copy()
    return out / out.sum()


def retrieval_augmented_target(z, q, eta: float, T: float, alpha: float = 0.1):
    """Return ``(p, p_hat)`` for target logits ``z`` and drafter distribution ``q``."""
    p = softmax_t(z, T)
    p_hat = tail_preserve(p, softmax_t(augment_logits(z, p, q, eta, T), T), alpha)
    return p, p_hat


def accept_ratio(p_hat, q, token):
    """``min(1, p_hat[token] / q[token])``; vectorized over ``token``."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    qt = q[token]
    if np.any(qt <= 0):
        raise InvariantBreach("drafted token has zero drafter probability")
    return np.minimum(1.0, p_hat[token] / qt)


def residual_distribution(p, p_hat, q) -> np.ndarray:
    """``norm(max(p - p_hat, p - q, 0))``, falling back to ``p`` when that is all zero."""
    p = np.asarray(p, dtype=np.float64)
    v = np.maximum(p - np.asarray(p_hat, dtype=np.float64), p - np.asarray(q, dtype=np.float64))
    try:
        return norm_clamped(v)
    except DegenerateResidualError:
        return p.copy()


def residual_sample(p, p_hat, q, rng: RngStream) -> int:
    return int(inverse_cdf(residual_distribution(p, p_hat, q), rng.uniform()))


def verify_block(
    target: LMBackend,
    C,
    prefix,
    drafted: Sequence[int],
    draft_probs: Sequence,
    cfg: EngineConfig,
    rng: RngStream,
) -> StepTrace:
    """Check drafted tokens in order; stop at and resample the first rejection."""
    C = check_tokens(C)
    prefix = check_tokens(prefix)
    drafted = [int(t) for t in drafted]
    if len(drafted) != len(draft_probs) or not drafted:
        raise InputDomainError("drafted tokens and draft distributions must align and be non-empty")
    T = cfg.temperature
    all_z = target.logits_batch(np.concatenate([C, prefix]), drafted)
    trace = StepTrace(drafted=drafted, draft_probs=[np.asarray(q) for q in draft_probs], accepted_count=0)
    for j, (x, z, q) in enumerate(zip(drafted, all_z, draft_probs)):
        p, p_hat = retrieval_augmented_target(z, q, cfg.eta, T, cfg.tail_factor)
        r = float(rng.uniform())
        trace.acceptance_randoms.append(r)
        if r <= accept_ratio(p_hat, q, x):
            trace.accepted_count = j + 1
            continue
        trace.p_vec = p.tolist()
        trace.p_hat_vec = p_hat.tolist()
        trace.q_vec = np.asarray(q, dtype=np.float64).tolist()
        trace.correction_token = residual_sample(p, p_hat, q, rng)
        break
    return trace


def single_position_step(p, p_hat, q, rng: RngStream, size: int | None = None):
    """Draft, verify and (on rejection) resample one position, ``size`` times at once.

    Uses the same primitives as :func:`verify_block`; it exists so the output
    distribution of one position can be measured by Monte Carlo.
    """
    q = np.asarray(q, dtype=np.float64)
    u = rng.uniform(size)
    r = rng.uniform(size)
    s = rng.uniform(size)
    x = inverse_cdf(q, u)
    accepted = r <= accept_ratio(p_hat, q, x)
    fallback = inverse_cdf(residual_distribution(p, p_hat, q), s)
    return np.where(accepted, x, fallback), accepted


def _check_pair(target: LMBackend, drafter: LMBackend):
    if target.vocab != drafter.vocab:
        raise ConfigurationError(
            f"target and drafter vocabularies differ ({target.vocab_size} vs {drafter.vocab_size})"
        )


def generate(
    target: LMBackend,
    drafter: LMBackend,
    C,
    C_S,
    query_prefix,
    cfg: EngineConfig,
    rng: RngStream | None = None,
):
    """Run the full decoding loop.

    Returns ``(tokens, stats, traces)`` where ``tokens`` holds the generated
    continuation only (not the query prefix). The last block is shortened so
    that exactly ``cfg.max_tokens`` tokens are emitted.
    """
    _check_pair(target, drafter)
    V = target.vocab_size
    C = check_tokens(C, V)
    C_S = check_tokens(C_S, V)
    committed = list(check_tokens(query_prefix, V))
    rng = rng if rng is not None else RngStream(cfg.seed)
    out: list[int] = []
    traces: list[StepTrace] = []
    stats = GenerationStats()
    while len(out) < cfg.max_tokens:
        gamma = min(cfg.gamma, cfg.max_tokens - len(out))
        drafted, probs = draft_block(drafter, C_S, committed, gamma, cfg.temperature, rng)
        trace = verify_block(target, C, committed, drafted, probs, cfg, rng)
        if (
            cfg.bonus_token
            and trace.correction_token is None
            and len(out) + gamma < cfg.max_tokens
        ):
            ctx = np.concatenate([C, committed, drafted])
            trace.bonus_token = sample_categorical(softmax_t(target.logits(ctx), cfg.temperature), rng)
        emitted = trace.emitted
        out.extend(emitted)
        committed.extend(emitted)
        traces.append(trace)
        stats.steps += 1
        stats.total_drafted += len(drafted)
        stats.total_accepted += trace.accepted_count
        stats.tokens_emitted += len(emitted)
    if stats.tokens_emitted != len(out) or len(out) > cfg.max_tokens:
        raise InvariantBreach("emitted token count disagrees with the step traces")
    return out, stats, traces


class RapidDecoder(BaseEstimator):
    """Estimator-style wrapper around :func:`generate`.

    Hyperparameters live in ``__init__`` so they can be read and changed with
    ``get_params`` / ``set_params`` (``clone`` works as well). Optionally holds
    a :class:`~ragspec.retrieval.ChunkRetriever` that builds the drafter
    context from the long context and the query.

    Attributes
    ----------
    stats_ : GenerationStats
        Statistics of the last :meth:`generate` call.
    traces_ : list of StepTrace
    retrieved_ : ndarray
        The drafter context used by the last call.
    """

    def __init__(
        self,
        target: LMBackend | None = None,
        drafter: LMBackend | None = None,
        retriever=None,
        gamma: int = 10,
        eta: float = 0.0,
        temperature: float = 1.0,
        tail_factor: float = 0.1,
        max_tokens: int = 32,
        seed: int = 0,
        bonus_token: bool = False,
    ):
        self.target = target
        self.drafter = drafter
        self.retriever = retriever
        self.gamma = gamma
        self.eta = eta
        self.temperature = temperature
        self.tail_factor = tail_factor
        self.max_tokens = max_tokens
        self.seed = seed
        self.bonus_token = bonus_token

    @property
    def config(self) -> EngineConfig:
        return EngineConfig(
            gamma=self.gamma,
            eta=self.eta,
            temperature=self.temperature,
            tail_factor=self.tail_factor,
            max_tokens=self.max_tokens,
            seed=self.seed,
            bonus_token=self.bonus_token,
        )

    def generate(self, context, query, retrieved=None, seed: int | None = None) -> list[int]:
        if self.target is None or self.drafter is None:
            raise ConfigurationError("both target and drafter backends are required")
        cfg = self.config
        if retrieved is None:
            if self.retriever is None:
                raise ConfigurationError("pass retrieved= or configure a retriever")
            retrieved = self.retriever.fit(context).transform([query])[0]
        self.retrieved_ = check_tokens(retrieved)
        rng = RngStream(cfg.seed if seed is None else seed)
        tokens, self.stats_, self.traces_ = generate(
            self.target, self.drafter, context, self.retrieved_, query, cfg, rng
        )
        return tokens
