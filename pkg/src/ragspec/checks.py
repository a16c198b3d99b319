"""Self-checks run by ``ragspec verify``.

Each suite returns a list of :class:`Failure`; an empty list means it passed.
Functions under test are looked up through their modules at call time so a
patched implementation is what gets checked.
"""

from __future__ import annotations

import itertools
import math
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import cost, engine, oracle, retrieval, sampling

__all__ = ["Failure", "SuiteResult", "SUITES", "run_suites", "random_step_fixture", "simplex_grid"]


@dataclass
class Failure:
    case: str
    detail: str
    size: int = 0


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def minimized(self) -> Failure | None:
        """Smallest failing case (by vocabulary size, then discovery order)."""
        if not self.failures:
            return None
        return min(enumerate(self.failures), key=lambda t: (t[1].size, t[0]))[1]


def random_step_fixture(rng: np.random.Generator, V: int, eta: float, T: float = 1.0, alpha: float = 0.1):
    """Random target logits and drafter distribution, plus the derived ``p`` and ``p_hat``."""
    z = rng.uniform(-3.0, 3.0, size=V)
    q = rng.dirichlet(np.full(V, 0.7))
    q = np.maximum(q, 1e-6)
    q /= q.sum()
    p, p_hat = engine.retrieval_augmented_target(z, q, eta, T, alpha)
    return z, p, p_hat, q


def simplex_grid(V: int = 3, step: float = 0.05):
    n = round(1 / step)
    for c in itertools.product(range(n + 1), repeat=V - 1):
        if sum(c) <= n:
            yield np.array(list(c) + [n - sum(c)], dtype=np.float64) / n


def _gradient(rng) -> SuiteResult:
    res = SuiteResult("distillation-gradient", 0)
    for T in (0.5, 1.0, 2.0):
        for k in range(34):
            V = int(rng.integers(2, 9))
            z = rng.uniform(-3, 3, size=V)
            q = rng.dirichlet(np.ones(V))
            err = oracle.fd_gradient_check(z, q, T, 1e-5)
            res.cases += 1
            if not err <= 1e-4:
                res.failures.append(Failure(f"T={T} z={z.tolist()} q={q.tolist()}", f"rel err {err:.3g}", V))
    return res


def _losslessness(rng) -> SuiteResult:
    res = SuiteResult("sd-losslessness", 0)
    grid = list(simplex_grid(3, 0.05))
    pairs = [(p, q) for p in grid for q in grid]
    for V in range(2, 9):
        for _ in range(150):
            pairs.append((rng.dirichlet(np.ones(V)), rng.dirichlet(np.ones(V))))
    for p, q in pairs:
        res.cases += 1
        rep = oracle.exact_step_distribution(p, p, q)
        if not rep.tv_distance <= 1e-9:
            res.failures.append(Failure(f"p={p.tolist()} q={q.tolist()}", f"TV {rep.tv_distance:.3g}", p.size))
    return res


def _tail(rng) -> SuiteResult:
    res = SuiteResult("tail-preservation", 0)
    for _ in range(100):
        V = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(V))
        raw = rng.dirichlet(np.full(V, 0.3))
        out = engine.tail_preserve(p, raw, 0.1)
        res.cases += 1
        mask = raw < 0.1 * raw.max()
        unnorm = np.where(mask, p, raw)
        if abs(out.sum() - 1.0) > 1e-12:
            res.failures.append(Failure(f"p={p.tolist()} raw={raw.tolist()}", f"sum {out.sum()!r}", V))
        elif not np.allclose(out * unnorm.sum(), unnorm, rtol=0, atol=1e-12):
            res.failures.append(Failure(f"p={p.tolist()} raw={raw.tolist()}", "tail entries not restored", V))
    return res


def _beta(rng, N: int) -> SuiteResult:
    res = SuiteResult("beta-consistency", 0)
    for k in range(10):
        V = int(rng.integers(2, 9))
        eta = (0.0, 5.0, 20.0)[k % 3]
        z, p, p_hat, q = random_step_fixture(rng, V, eta)
        res.cases += 1
        beta = float(np.minimum(q, p_hat).sum())
        ident = 1.0 - sampling.tv_distance(q, p_hat)
        if abs(beta - ident) > 1e-12:
            res.failures.append(Failure(f"eta={eta} V={V}", f"beta {beta!r} != 1 - TV(q, p_hat) {ident!r}", V))
            continue
        _, accepted = engine.single_position_step(p, p_hat, q, sampling.RngStream(1000 + k), N)
        sigma = math.sqrt(beta * (1 - beta) / N)
        if abs(accepted.mean() - beta) > 3 * sigma + 1e-12:
            res.failures.append(Failure(f"eta={eta} V={V}", f"rate {accepted.mean():.5f} vs beta {beta:.5f}", V))
    return res


def _conformance(rng, N: int, tol: float) -> SuiteResult:
    res = SuiteResult("engine-oracle", 0)
    for k in range(20):
        V = int(rng.integers(2, 9))
        eta = (0.0, 5.0, 20.0)[k % 3]
        z, p, p_hat, q = random_step_fixture(rng, V, eta)
        res.cases += 1
        exact = oracle.exact_step_distribution(p, p_hat, q).exact_output
        freq = oracle.monte_carlo_step(
            lambda r, n: engine.single_position_step(p, p_hat, q, r, n), N, sampling.RngStream(2000 + k), V
        )
        tv = sampling.tv_distance(freq, exact)
        if tv > tol:
            res.failures.append(Failure(f"eta={eta} V={V}", f"TV {tv:.4g} > {tol}", V))
    return res


def _retrieval(rng) -> SuiteResult:
    res = SuiteResult("retrieval", 0)
    cfg = retrieval.RetrievalConfig()
    for n, want in ((122880, 5120), (4096, 4096), (983040, 40960)):
        res.cases += 1
        got = retrieval.retrieval_budget(n, cfg)
        if got != want:
            res.failures.append(Failure(f"context_len={n}", f"budget {got} != {want}"))
    small = retrieval.RetrievalConfig(chunk_size=8, min_budget=16, divisor=4.0, embed_dim=16)
    for _ in range(20):
        C = rng.integers(0, 40, size=int(rng.integers(1, 120)))
        query = rng.integers(0, 40, size=int(rng.integers(0, 10)))
        chunks = retrieval.chunk_context(C, small)
        r = retrieval.ChunkRetriever.from_config(small).fit(C)
        out = r.transform([query])[0]
        res.cases += 1
        if not np.array_equal(np.concatenate([c.tokens for c in chunks]), C):
            res.failures.append(Failure(f"C={C.tolist()}", "chunks do not concatenate to C"))
        if any(s < small.sim_threshold for _, s, sel in r.last_trace_ if sel):
            res.failures.append(Failure(f"query={query.tolist()}", "selected chunk under threshold"))
        if out.size > retrieval.retrieval_budget(C.size, small):
            res.failures.append(Failure(f"query={query.tolist()}", "budget exceeded"))
    return res


def _cost(rng) -> SuiteResult:
    res = SuiteResult("cost-model", 0)
    for _ in range(10):
        params = cost.CostParams(
            target_params=float(rng.uniform(1e8, 1e11)),
            drafter_params=float(rng.uniform(1e8, 1e11)),
            context_len=float(rng.integers(1024, 1 << 20)),
            retrieval_len=float(rng.integers(256, 1 << 15)),
            gamma=int(rng.integers(1, 20)),
            beta_sd=float(rng.uniform(0.05, 1)),
            beta_rapid=float(rng.uniform(0.05, 1)),
        )
        rep = cost.flops_per_step(params)
        res.cases += 1
        ratio = rep.flops_sd / rep.flops_rapid
        if abs(ratio / (params.beta_rapid / params.beta_sd) - 1) > 1e-12:
            res.failures.append(Failure(str(params), f"ratio identity off: {ratio!r}"))
    default = cost.CostParams(target_params=8e9, drafter_params=8e9, retrieval_len=4096, gamma=10, beta_rapid=0.8)
    curve = cost.speedup_curve(default, cost.DEFAULT_LENGTHS)
    speed = [r[1] for r in curve]
    res.cases += 1
    if any(b < a for a, b in zip(speed, speed[1:])):
        res.failures.append(Failure("default grid", "rapid speedup not monotone in L"))
    if cost.crossover_length(default, cost.DEFAULT_LENGTHS) is None:
        res.failures.append(Failure("default grid", "no crossover"))
    return res


def _sampling(rng) -> SuiteResult:
    res = SuiteResult("sampling", 0)
    for _ in range(50):
        V = int(rng.integers(2, 9))
        z = rng.uniform(-5, 5, size=V)
        T = float(rng.choice([0.5, 1.0, 2.0]))
        res.cases += 1
        p = sampling.softmax_t(z, T)
        if abs(p.sum() - 1) > 1e-12 or np.abs(sampling.softmax_t(z + 3.7, T) - p).max() > 1e-12:
            res.failures.append(Failure(f"z={z.tolist()} T={T}", "softmax not normalized / shift invariant", V))
        g = sampling.kd_gradient(z, rng.dirichlet(np.ones(V)), T)
        if abs(g.sum()) > 1e-12:
            res.failures.append(Failure(f"z={z.tolist()}", "gradient does not sum to zero", V))
    return res


SUITES = {
    "distillation-gradient": lambda rng, quick: _gradient(rng),
    "sd-losslessness": lambda rng, quick: _losslessness(rng),
    "tail-preservation": lambda rng, quick: _tail(rng),
    "beta-consistency": lambda rng, quick: _beta(rng, 200_000 if quick else 1_000_000),
    "engine-oracle": lambda rng, quick: _conformance(rng, 200_000 if quick else 1_000_000, 0.012 if quick else 0.005),
    "retrieval": lambda rng, quick: _retrieval(rng),
    "cost-model": lambda rng, quick: _cost(rng),
    "sampling": lambda rng, quick: _sampling(rng),
}


def run_suites(seed: int = 0, quick: bool = True, names=None) -> list[SuiteResult]:
    results = []
    for i, (name, fn) in enumerate(SUITES.items()):
        if names and name not in names:
            continue
        rng = np.random.default_rng([seed, i])
        try:
            results.append(fn(rng, quick))
        except Exception as exc:  # a crash inside a suite counts as a failure of that suite
            res = SuiteResult(name, 0)
            res.failures.append(Failure("suite crashed", "".join(traceback.format_exception_only(type(exc), exc)).strip()))
            results.append(res)
    return results
