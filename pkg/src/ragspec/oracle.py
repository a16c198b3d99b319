"""Independent checks for the decoding engine.

Exact single-position output distributions by enumeration, Monte Carlo
conformance, finite-difference gradient checks and transfer-strength sweeps.
The softmax/KL here go through :mod:`scipy.special` rather than the engine's
own primitives so that the two routes stay independent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, rel_entr, softmax

from . import engine, sampling
from .sampling import RngStream
from .utils.validation import check_prob_vector

__all__ = [
    "StepDistributionReport",
    "exact_step_distribution",
    "monte_carlo_step",
    "distill_loss",
    "fd_gradient_check",
    "shifted_target",
    "eta_divergence_curve",
    "write_divergence_csv",
    "DIVERGENCE_COLUMNS",
]

DIVERGENCE_COLUMNS = ("eta", "kl_q_phat", "tv_output_vs_p", "beta", "tv_unclamped_residual")


@dataclass
class StepDistributionReport:
    """Exact output distribution of one verified position.

    ``tv_distance`` is total variation, half the L1 distance, between
    ``exact_output`` and ``target_p``. ``unclamped_residual`` is the residual
    obtained by dividing ``p - min(q, p_hat)`` by ``1 - beta`` without
    clamping; it can have negative entries. ``tv_unclamped_residual`` is half
    the L1 distance between it and the clamped residual actually sampled.
    """

    exact_output: np.ndarray
    target_p: np.ndarray
    tv_distance: float
    beta: float
    residual: np.ndarray
    unclamped_residual: np.ndarray | None
    tv_unclamped_residual: float
    degenerate: bool = False


def _tv(a, b) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(a) - np.asarray(b))))


def exact_step_distribution(p, p_hat, q) -> StepDistributionReport:
    """Enumerate ``P(x) = min(q, p_hat)(x) + (1 - beta) * residual(x)``."""
    p = check_prob_vector(p)
    p_hat = check_prob_vector(p_hat, size=p.size)
    q = check_prob_vector(q, size=p.size)
    overlap = np.minimum(q, p_hat)
    beta = float(overlap.sum())
    raw = p - overlap
    clamped = np.maximum(raw, 0.0)
    degenerate = not clamped.sum() > 0
    residual = p.copy() if degenerate else clamped / clamped.sum()
    output = overlap + (1.0 - beta) * residual
    if 1.0 - beta > 0:
        unclamped = raw / (1.0 - beta)
        tv_unclamped = _tv(unclamped, residual)
    else:
        unclamped, tv_unclamped = None, 0.0
    return StepDistributionReport(
        exact_output=output,
        target_p=p,
        tv_distance=_tv(output, p),
        beta=beta,
        residual=residual,
        unclamped_residual=unclamped,
        tv_unclamped_residual=tv_unclamped,
        degenerate=degenerate,
    )


def monte_carlo_step(step: Callable, N: int, rng: RngStream, vocab_size: int, batch: int = 1_000_000):
    """Empirical output frequencies of ``step(rng, size) -> tokens`` over ``N`` trials."""
    if N < 1:
        raise ValueError("N must be >= 1")
    counts = np.zeros(vocab_size, dtype=np.int64)
    done = 0
    while done < N:
        n = min(batch, N - done)
        tokens = step(rng, n)
        if isinstance(tokens, tuple):
            tokens = tokens[0]
        counts += np.bincount(np.asarray(tokens), minlength=vocab_size)
        done += n
    return counts / N


def distill_loss(z, q, T: float) -> float:
    """``T**2 * KL(q || softmax(z / T))``; ``inf`` if ``q`` has mass where ``p`` underflows."""
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    logp = log_softmax(z / T)
    support = q > 0
    if np.any(np.exp(logp[support]) == 0.0):
        return float("inf")
    return float(T * T * np.sum(q[support] * (np.log(q[support]) - logp[support])))


def fd_gradient_check(z, q, T: float = 1.0, h: float = 1e-5) -> float:
    """Max relative error of :func:`ragspec.sampling.kd_gradient` against central differences."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(distill_loss(z, q, T)):
        return float("inf")
    fd = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        fd[i] = (distill_loss(z + e, q, T) - distill_loss(z - e, q, T)) / (2 * h)
    analytic = sampling.kd_gradient(z, q, T)
    return float(np.max(np.abs(analytic - fd) / (np.abs(fd) + 1e-12)))


def shifted_target(z, q, eta: float, T: float) -> np.ndarray:
    """Shifted target before tail restoration, ``softmax(z/T + eta (q - p))``."""
    z = np.asarray(z, dtype=np.float64)
    p = softmax(z / T)
    return softmax(z / T + eta * (np.asarray(q) - p))


def eta_divergence_curve(z, q, T: float, etas: Sequence[float], alpha: float = 0.1):
    """Rows ``(eta, KL(q || shifted), TV(output, p), beta, tv_unclamped_residual)``.

    The KL column uses the shifted target before tail restoration (the
    quantity a distillation step decreases); the output, ``beta`` and residual
    columns use the tail-restored distribution the engine verifies against.
    """
    etas = [float(e) for e in etas]
    if not etas or etas[0] != 0.0 or any(b < a for a, b in zip(etas, etas[1:])):
        raise ValueError("etas must be sorted ascending and start at 0")
    z = np.asarray(z, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p = softmax(z / T)
    rows = []
    for eta in etas:
        raw = softmax(engine.augment_logits(z, p, q, eta, T) / T)
        p_hat = engine.tail_preserve(p, raw, alpha)
        rep = exact_step_distribution(p, p_hat, q)
        kl = float(np.sum(rel_entr(q, raw)))
        rows.append((eta, kl, rep.tv_distance, rep.beta, rep.tv_unclamped_residual))
    return rows


def write_divergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# tv = 0.5 * L1 distance\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIVERGENCE_COLUMNS)
        for row in rows:
            w.writerow([format(float(v), ".17g") for v in row])
