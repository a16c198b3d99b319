"""Input validation helpers shared by every module.

They mirror the role of :mod:`sklearn.utils.validation`: coerce the input to a
1-D float or int array and raise :class:`InputDomainError` on anything that
violates the contract.
"""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import InputDomainError

PROB_SUM_ATOL = 1e-9


def check_tokens(tokens, vocab_size: int | None = None) -> np.ndarray:
    """Return ``tokens`` as a 1-D int64 array, checking ids against ``vocab_size``."""
    arr = np.asarray(tokens)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    if arr.ndim != 1:
        raise InputDomainError(f"token sequence must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise InputDomainError("token ids must be integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise InputDomainError(f"negative token id {int(arr.min())}")
    if vocab_size is not None and arr.max() >= vocab_size:
        raise InputDomainError(
            f"token id {int(arr.max())} out of range for vocabulary of size {vocab_size}"
        )
    return arr


def check_logits(z, size: int | None = None) -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InputDomainError(f"logits must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputDomainError("logits must be finite")
    if size is not None and arr.size != size:
        raise InputDomainError(f"expected {size} logits, got {arr.size}")
    return arr


def check_prob_vector(p, size: int | None = None, atol: float = PROB_SUM_ATOL) -> np.ndarray:
    """Validate a probability vector: non-negative entries summing to one."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InputDomainError(f"probability vector must be non-empty and 1-D, got shape {arr.shape}")
    if size is not None and arr.size != size:
        raise InputDomainError(f"expected {size} probabilities, got {arr.size}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
        raise InputDomainError("probabilities must be finite and non-negative")
    total = arr.sum()
    if abs(total - 1.0) > atol:
        raise InputDomainError(f"probabilities sum to {total!r}, not 1")
    return arr


def check_temperature(T) -> float:
    T = float(T)
    if not math.isfinite(T) or T <= 0.0:
        raise InputDomainError(f"temperature must be finite and > 0, got {T!r}")
    return T
