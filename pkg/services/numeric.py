"""Seedable numeric primitives shared by every other service.

All logarithms are natural. Probabilities are floored at PROB_FLOOR before any log.
"""
from __future__ import annotations

import numpy as np

from framework.errors import DimensionError, DomainError, NumericError, SelectionError, SimilarityError

PROB_FLOOR = 1e-12
SIMPLEX_ATOL = 1e-9

Rng = np.random.Generator


def derive_rng(seed: int, *keys: int) -> Rng:
    """Stream keyed by (seed, *keys); independent of how many other streams were drawn."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *(int(k) for k in keys)])))


def softmax(logits) -> np.ndarray:
    """Stable softmax over the last axis."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax needs at least one logit", shape=list(x.shape))
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax received non-finite logits")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def check_prob_vector(p) -> np.ndarray:
    """Validate rows on the last axis as probability vectors."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise DimensionError("probability vector is empty", shape=list(arr.shape))
    if not np.all(np.isfinite(arr)) or np.any(arr < -SIMPLEX_ATOL) or np.any(arr > 1 + SIMPLEX_ATOL):
        raise DomainError("probability entries must lie in [0, 1]")
    if np.any(np.abs(arr.sum(axis=-1) - 1.0) > SIMPLEX_ATOL):
        raise DomainError("probability vector does not sum to 1")
    return arr


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats over the last axis; 0 ln 0 = 0."""
    arr = check_prob_vector(p)
    safe = np.maximum(arr, PROB_FLOOR)
    h = -np.sum(np.where(arr > 0, arr * np.log(safe), 0.0), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def weighted_sample_without_replacement(weights, k: int, rng: Rng) -> np.ndarray:
    """Draw k distinct indices with exponent keys u^(1/w); zero weights are never drawn.

    Returns the indices in ascending order.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise DimensionError("weights must be a vector", shape=list(w.shape))
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and nonnegative")
    positive = np.flatnonzero(w > 0)
    if k > positive.size:
        raise SelectionError(
            f"cannot draw {k} items from {positive.size} positive weights",
            requested=int(k),
            available=int(positive.size),
            shortfall=int(k - positive.size),
        )
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    u = rng.random(positive.size)
    with np.errstate(divide="ignore"):
        keys = np.log(u) / w[positive]
    top = np.argsort(-keys, kind="stable")[:k]
    return np.sort(positive[top])


def cosine(a, b) -> float:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError("cosine needs equal shapes", left=list(x.shape), right=list(y.shape))
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise SimilarityError("cosine of a zero vector is undefined")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))
