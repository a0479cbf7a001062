"""MC-dropout posterior, information gain, and reliable-example sampling weights."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from framework.errors import ConfigurationError, DimensionError, DomainError, SelectionError
from models.params import ModelParams
from models.scores import SelectionScores

from .network import dropout_mask, masked_proba
from .numeric import Rng, check_prob_vector, derive_rng, entropy

logger = logging.getLogger(__name__)

# stream key for scoring-pass masks; see derive_rng
MC_STREAM = 1
SCORE_BLOCK = 256


@dataclass(frozen=True)
class MCPosterior:
    """T x C matrix; row t is the prediction of the t-th masked model."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise DimensionError("MC posterior needs a T x C matrix with T >= 1", shape=list(self.probs.shape))
        check_prob_vector(self.probs)

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    @property
    def classes(self) -> int:
        return self.probs.shape[1]

    def mean(self) -> np.ndarray:
        return _sample_mean(self.probs[None])[0]


def _sample_mean(probs: np.ndarray) -> np.ndarray:
    """Mean over the sample axis of (n, T, C); identical samples return the sample itself."""
    mean = probs.mean(axis=1)
    same = np.all(probs == probs[:, :1, :], axis=(1, 2))
    mean[same] = probs[same, 0, :]
    return mean


def mc_posterior(params: ModelParams, x, T: int, rate: float, rng: Rng) -> MCPosterior:
    if T < 1:
        raise ConfigurationError(f"need at least one MC sample, got T={T}")
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    row = np.asarray(x, dtype=np.float64)[None, :]
    masks = [None if rate == 0 else dropout_mask(params.dims.hidden, rate, rng) for _ in range(T)]
    return MCPosterior(np.concatenate([masked_proba(params, row, m) for m in masks]))


def _bald_rows(probs: np.ndarray) -> np.ndarray:
    """Information gain for each (T, C) slice of an (n, T, C) array, clamped to [0, ln C]."""
    gain = entropy(_sample_mean(probs)) - np.atleast_2d(entropy(probs)).reshape(probs.shape[:2]).mean(axis=1)
    same = np.all(probs == probs[:, :1, :], axis=(1, 2))
    gain = np.where(same, 0.0, gain)
    return np.clip(gain, 0.0, math.log(probs.shape[2]))


def bald(mc: MCPosterior) -> float:
    """Entropy of the mean prediction minus the mean per-sample entropy."""
    return float(_bald_rows(mc.probs[None])[0])


def certainty_score(mc: MCPosterior, classes: int) -> float:
    if classes < 2:
        raise ConfigurationError(f"certainty needs at least 2 classes, got {classes}")
    return float(_certainty(np.array([bald(mc)]), classes)[0])


def _certainty(gain: np.ndarray, classes: int) -> np.ndarray:
    return np.clip(1.0 - gain / math.log(classes), 0.0, 1.0)


def confidence_score(mc: MCPosterior, pseudo_label: int) -> float:
    if not 0 <= pseudo_label < mc.classes:
        raise DomainError(f"pseudo label {pseudo_label} outside [0, {mc.classes})")
    return float(np.mean(mc.probs[:, pseudo_label]))


def sampling_weights(scores: Sequence[Tuple[float, float]], alpha: float) -> np.ndarray:
    """Normalized alpha * confidence + (1 - alpha) * certainty over the pool."""
    pairs = np.asarray(scores, dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise SelectionError("cannot weight an empty pool")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    fused = alpha * pairs[:, 0] + (1.0 - alpha) * pairs[:, 1]
    total = fused.sum()
    if not total > 0:
        raise SelectionError("all fused scores are zero; the pool is degenerate", pool_size=int(pairs.shape[0]))
    return fused / total


@dataclass(frozen=True)
class PoolScores:
    confidence: np.ndarray
    certainty: np.ndarray
    bald_raw: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return int(self.confidence.size)

    def to_models(self) -> List[SelectionScores]:
        return [
            SelectionScores(confidence=cf, certainty=ct, weight=w, bald_raw=b)
            for cf, ct, w, b in zip(
                self.confidence.tolist(), self.certainty.tolist(), self.weight.tolist(), self.bald_raw.tolist()
            )
        ]


def score_masks(hidden_dim: int, T: int, rate: float, seed: int, iteration: int) -> List[np.ndarray | None]:
    """One mask per masked model, shared by every example of the pool."""
    if rate == 0:
        return [None] * T
    return [dropout_mask(hidden_dim, rate, derive_rng(seed, MC_STREAM, iteration, t)) for t in range(T)]


def score_pool(
    params: ModelParams,
    X: np.ndarray,
    pseudo_labels: np.ndarray,
    *,
    T: int,
    rate: float,
    alpha: float,
    seed: int,
    iteration: int,
    workers: int = 1,
) -> PoolScores:
    """Confidence, certainty and fused weight for every row of X.

    Rows are scored in fixed-size blocks, so any worker count yields identical scores.
    """
    if T < 1:
        raise ConfigurationError(f"need at least one MC sample, got T={T}")
    if X.shape[0] == 0:
        raise SelectionError("cannot score an empty pool")
    classes = params.dims.classes
    if classes < 2:
        raise ConfigurationError("scoring needs at least 2 classes")
    masks = score_masks(params.dims.hidden, T, rate, seed, iteration)
    labels = np.asarray(pseudo_labels, dtype=np.int64)

    def score_block(start: int) -> tuple[np.ndarray, np.ndarray]:
        rows = X[start : start + SCORE_BLOCK]
        probs = np.stack([masked_proba(params, rows, m) for m in masks], axis=1)
        conf = probs[np.arange(rows.shape[0]), :, labels[start : start + SCORE_BLOCK]].mean(axis=1)
        return conf, _bald_rows(probs)

    starts = range(0, X.shape[0], SCORE_BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(score_block, starts))
    else:
        parts = [score_block(s) for s in starts]
    confidence = np.concatenate([p[0] for p in parts])
    gain = np.concatenate([p[1] for p in parts])
    certainty = _certainty(gain, classes)
    weight = sampling_weights(np.column_stack([confidence, certainty]), alpha)
    logger.info(
        "scored pool n=%d T=%d rate=%.3f mean_s_cf=%.4f mean_s_ct=%.4f", X.shape[0], T, rate,
        float(confidence.mean()), float(certainty.mean()),
    )
    return PoolScores(confidence=confidence, certainty=certainty, bald_raw=gain, weight=weight)
