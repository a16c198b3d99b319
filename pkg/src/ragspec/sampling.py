"""Numeric primitives: tempered softmax, categorical sampling, clamped
normalization and the distillation gradient used for the logit shift."""

from __future__ import annotations

import numpy as np

from .exceptions import DegenerateResidualError, InputDomainError
from .utils.validation import check_logits, check_prob_vector, check_temperature

__all__ = [
    "RNG_ALGORITHM",
    "RngStream",
    "softmax_t",
    "inverse_cdf",
    "sample_categorical",
    "norm_clamped",
    "kd_gradient",
    "kl_divergence",
    "tv_distance",
]

RNG_ALGORITHM = "numpy.random.PCG64"


class RngStream:
    """Seeded uniform stream backed by numpy's PCG64 bit generator.

    PCG64 output is specified bit-for-bit by numpy, so a given seed yields the
    same draws on every platform. One stream belongs to one generation run.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        """Draw from U[0, 1)."""
        return self._gen.random(size)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


def softmax_t(z, T: float = 1.0) -> np.ndarray:
    """``softmax(z / T)`` with max-subtraction."""
    z = check_logits(z)
    T = check_temperature(T)
    s = z / T
    e = np.exp(s - s.max())
    return e / e.sum()


def inverse_cdf(p, u):
    """Map uniform draw(s) ``u`` to token ids by inverting the CDF of ``p``.

    Tokens are laid out in ascending id order; a draw ``u`` selects the first
    token whose cumulative mass exceeds it, so zero-mass tokens are never
    returned. Works elementwise on an array of draws.
    """
    p = np.asarray(p, dtype=np.float64)
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, u, side="right")
    # u can land above cdf[-1] when the cumulative sum rounds below 1
    last = int(np.flatnonzero(p > 0)[-1])
    return np.minimum(idx, last)


def sample_categorical(p, rng: RngStream) -> int:
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0 or not np.any(p > 0):
        raise InputDomainError("cannot sample from an all-zero vector")
    p = check_prob_vector(p)
    return int(inverse_cdf(p, rng.uniform()))


def norm_clamped(v) -> np.ndarray:
    """``max(v, 0) / ||max(v, 0)||_1``."""
    v = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    total = v.sum()
    if not total > 0.0:
        raise DegenerateResidualError("no strictly positive entry left after clamping")
    return v / total


def kd_gradient(z, q, T: float = 1.0) -> np.ndarray:
    """Gradient of ``T**2 * KL(q || softmax(z / T))`` with respect to ``z``.

    Equals ``T * (p - q)``; a descent step of size ``eta`` therefore moves the
    logits by ``+eta * T * (q - p)``.
    """
    z = check_logits(z)
    q = check_prob_vector(q, size=z.size)
    p = softmax_t(z, T)
    return T * (p - q)


def kl_divergence(q, p) -> float:
    """``KL(q || p)`` with ``0 log 0 = 0``; ``inf`` when ``q`` has mass where ``p`` has none."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    support = q > 0
    if np.any(p[support] <= 0):
        return float("inf")
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


def tv_distance(a, b) -> float:
    """Total variation distance, half the L1 distance."""
    return 0.5 * float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())
