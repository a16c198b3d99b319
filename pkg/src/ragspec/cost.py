"""FLOPs accounting per decoding step and the speedups derived from it.

All figures are FLOPs for one step that produces ``gamma`` tokens. Speedup is
the ratio of plain long-context FLOPs to speculative FLOPs, a compute proxy
that ignores memory bandwidth, so it is not a wall-clock prediction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable

from .exceptions import InputDomainError

__all__ = [
    "CostParams",
    "CostReport",
    "flops_per_step",
    "speedup_curve",
    "crossover_length",
    "write_cost_csv",
    "COST_COLUMNS",
    "DEFAULT_LENGTHS",
]

COST_COLUMNS = ("L", "flops_lc", "flops_sd", "flops_rapid", "rapid_speedup", "sd_speedup")
DEFAULT_LENGTHS = tuple(1024 * 2**k for k in range(8))  # 1K .. 128K


@dataclass(frozen=True)
class CostParams:
    """Parameters of the per-step FLOPs model.

    Attributes
    ----------
    target_params, drafter_params : float
        Parameter counts of the target and drafter models.
    context_len : float
        Long-context length seen by the target, in tokens.
    retrieval_len : float
        Retrieved-context length seen by the drafter, in tokens.
    gamma : int
        Drafted tokens per step.
    beta_sd, beta_rapid : float
        Expected accepted fraction per block of ``gamma`` for plain speculative
        decoding and for the retrieval-augmented variant.
    """

    target_params: float = 8e9
    drafter_params: float = 8e9
    context_len: float = 131072
    retrieval_len: float = 4096
    gamma: int = 10
    beta_sd: float = 0.6
    beta_rapid: float = 0.8

    def __post_init__(self):
        for name in ("target_params", "drafter_params", "context_len", "retrieval_len"):
            if not getattr(self, name) > 0:
                raise InputDomainError(f"{name} must be > 0")
        if self.gamma < 1:
            raise InputDomainError("gamma must be >= 1")
        for name in ("beta_sd", "beta_rapid"):
            b = getattr(self, name)
            if not 0.0 < b <= 1.0:
                raise InputDomainError(f"{name} must lie in (0, 1], got {b!r}")


@dataclass(frozen=True)
class CostReport:
    flops_lc: float
    flops_drafter: float
    flops_sd: float
    flops_rapid: float


def flops_per_step(params: CostParams) -> CostReport:
    g = params.gamma
    T, D = params.target_params, params.drafter_params
    L, LR = params.context_len, params.retrieval_len
    drafter = 2 * g * D * LR + g**2 * D
    speculative = drafter + 2 * T * (L + g)
    return CostReport(
        flops_lc=2 * g * T * L + g**2 * T,
        flops_drafter=drafter,
        flops_sd=speculative / params.beta_sd,
        flops_rapid=speculative / params.beta_rapid,
    )


def speedup_curve(params: CostParams, lengths: Iterable[float]):
    """``(L, rapid_speedup, sd_speedup, report)`` for each context length."""
    rows = []
    prev = None
    for L in lengths:
        if prev is not None and L < prev:
            raise InputDomainError("lengths must be ascending")
        prev = L
        rep = flops_per_step(replace(params, context_len=L))
        rows.append((L, rep.flops_lc / rep.flops_rapid, rep.flops_lc / rep.flops_sd, rep))
    return rows


def crossover_length(params: CostParams, lengths: Iterable[float], threshold: float = 1.0):
    """Smallest length on the grid whose speculative speedup reaches ``threshold``, else ``None``."""
    for L, rapid, _, _ in speedup_curve(params, lengths):
        if rapid >= threshold:
            return L
    return None


def write_cost_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COST_COLUMNS)
        for L, rapid, sd, rep in rows:
            w.writerow(
                [format(float(v), ".17g") for v in (L, rep.flops_lc, rep.flops_sd, rep.flops_rapid, rapid, sd)]
            )
