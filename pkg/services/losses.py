"""Training objectives: CE, PHCE, easy-hard contrastive regularization, and their sum.

The array-level helpers (`classification_terms`, `contrastive_terms`) return both the
values and the derivatives the backward pass in services.network consumes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from framework.errors import ConfigurationError, DomainError, SimilarityError
from models.config import LossConfig
from models.params import ModelParams

from .numeric import PROB_FLOOR, Rng

logger = logging.getLogger(__name__)


def ce(p: float) -> float:
    if not p > 0:
        raise DomainError(f"cross-entropy needs p > 0, got {p}")
    return -math.log(p)


def phce(p: float, tau: float) -> float:
    """Partially huberised CE: linear below p = 1/tau, -ln p above."""
    if not tau > 1:
        raise ConfigurationError(f"PHCE needs tau > 1, got {tau}")
    if not p > 0:
        raise DomainError(f"PHCE needs p > 0, got {p}")
    if p <= 1.0 / tau:
        return -tau * p + math.log(tau) + 1.0
    return -math.log(p)


def phce_derivative(p: float, tau: float) -> float:
    """dphi/dp; its magnitude never exceeds tau."""
    if p <= 1.0 / tau:
        return -tau
    return -1.0 / p


def classification_terms(p_true: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-example loss and dloss/dp for the probabilities of the target classes."""
    p = np.maximum(np.asarray(p_true, dtype=np.float64), PROB_FLOOR)
    nll = -np.log(p)
    dnll = -1.0 / p
    if cfg.kind == "ce":
        return nll, dnll
    knee = p <= 1.0 / cfg.tau
    values = np.where(knee, -cfg.tau * p + math.log(cfg.tau) + 1.0, nll)
    derivs = np.where(knee, -cfg.tau, dnll)
    return values, derivs


@dataclass(frozen=True)
class Pairing:
    """Row indices into the easy set (anchors, positives) and the hard set (negatives) for one epoch."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray  # (n_anchors, n_negatives)
    skipped: int

    def __len__(self) -> int:
        return int(self.anchors.size)

    def restrict(self, rows: np.ndarray) -> "Pairing":
        """Keep the anchors that appear in `rows` (a minibatch of easy-set row indices)."""
        keep = np.isin(self.anchors, rows)
        return Pairing(self.anchors[keep], self.positives[keep], self.negatives[keep], self.skipped)


@dataclass(frozen=True)
class ContrastiveSet:
    """Feature rows for anchors, their positives and (n, N_n, F) negatives."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    @classmethod
    def from_pairing(cls, pairing: Pairing, X_easy: np.ndarray, X_hard: np.ndarray) -> "ContrastiveSet":
        return cls(X_easy[pairing.anchors], X_easy[pairing.positives], X_hard[pairing.negatives])

    def __len__(self) -> int:
        return int(self.anchors.shape[0])


def build_pairing(
    easy_labels: np.ndarray,
    hard_labels: np.ndarray,
    n_negatives: int,
    rng: Rng,
    easy_usable: Optional[np.ndarray] = None,
    hard_usable: Optional[np.ndarray] = None,
) -> Pairing:
    """One positive from the easy set and n_negatives from the hard set, all sharing the anchor's pseudo class.

    Negatives are drawn with replacement when the class has fewer hard examples than
    n_negatives. Anchors without a positive or without any same-class hard example
    are skipped. Rows flagged False in `easy_usable` / `hard_usable` (zero hidden
    vectors) never take part and count as skipped when they would be anchors.
    """
    easy_labels = np.asarray(easy_labels)
    hard_labels = np.asarray(hard_labels)
    easy_ok = np.ones(easy_labels.size, bool) if easy_usable is None else np.asarray(easy_usable, bool)
    hard_ok = np.ones(hard_labels.size, bool) if hard_usable is None else np.asarray(hard_usable, bool)
    anchors, positives, negatives = [], [], []
    skipped = 0
    by_class_easy = {c: np.flatnonzero((easy_labels == c) & easy_ok) for c in np.unique(easy_labels)}
    by_class_hard = {c: np.flatnonzero((hard_labels == c) & hard_ok) for c in np.unique(hard_labels)}
    for i, c in enumerate(easy_labels):
        if not easy_ok[i]:
            skipped += 1
            continue
        same = by_class_easy[c]
        same = same[same != i]
        hard = by_class_hard.get(c, np.empty(0, dtype=np.int64))
        if same.size == 0 or hard.size == 0:
            skipped += 1
            continue
        anchors.append(i)
        positives.append(same[rng.integers(same.size)])
        negatives.append(rng.choice(hard, size=n_negatives, replace=hard.size < n_negatives))
    if not anchors:
        return Pairing(np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, n_negatives), np.int64), skipped)
    return Pairing(np.asarray(anchors), np.asarray(positives), np.stack(negatives), skipped)


def nonzero_rows(h: np.ndarray) -> np.ndarray:
    return np.linalg.norm(h, axis=-1) > 0


def usable_anchors(h_anchor: np.ndarray, h_pos: np.ndarray, h_neg: np.ndarray) -> np.ndarray:
    """Anchors whose own, positive and every negative hidden vector are nonzero."""
    return nonzero_rows(h_anchor) & nonzero_rows(h_pos) & nonzero_rows(h_neg).all(axis=1)


def _unit_rows(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(h, axis=-1)
    if np.any(norms == 0):
        raise SimilarityError("zero hidden representation in contrastive pair")
    return h / norms[..., None], norms


def contrastive_terms(
    h_anchor: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray,
    g_temperature: float,
    form: str = "neglog",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-anchor regularizer values and their gradients w.r.t. the three hidden inputs."""
    n_neg = h_neg.shape[1]
    ua, na = _unit_rows(h_anchor)
    up, np_ = _unit_rows(h_pos)
    un, nn = _unit_rows(h_neg)
    cos_p = np.sum(ua * up, axis=1)
    cos_n = np.einsum("id,ikd->ik", ua, un)
    g_pos = cos_p / g_temperature
    g_neg = cos_n / g_temperature

    top = np.maximum(g_pos, g_neg.max(axis=1))
    e_pos = np.exp(g_pos - top)
    e_neg = np.exp(g_neg - top[:, None]) / n_neg
    denom = e_pos + e_neg.sum(axis=1)
    log_r = g_pos - top - np.log(denom)
    r = np.exp(log_r)
    share_neg = e_neg / denom[:, None]

    if form == "neglog":
        values = -log_r
        d_gpos = r - 1.0
        d_gneg = share_neg
    elif form == "literal":
        values = r
        d_gpos = r * (1.0 - r)
        d_gneg = -r[:, None] * share_neg
    else:
        raise ConfigurationError(f"unknown contrastive form {form!r}")

    d_cpos = d_gpos / g_temperature
    d_cneg = d_gneg / g_temperature
    # d cos(a, b) / d a = (u_b - cos * u_a) / |a|
    d_anchor = d_cpos[:, None] * (up - cos_p[:, None] * ua) / na[:, None]
    d_anchor += np.einsum("ik,ikd->id", d_cneg, un - cos_n[..., None] * ua[:, None, :]) / na[:, None]
    d_pos = d_cpos[:, None] * (ua - cos_p[:, None] * up) / np_[:, None]
    d_neg = d_cneg[..., None] * (ua[:, None, :] - cos_n[..., None] * un) / nn[..., None]
    return values, d_anchor, d_pos, d_neg


def contrastive_reg(
    h_anchor: np.ndarray,
    h_pos: np.ndarray,
    h_neg: np.ndarray,
    g_temperature: float = 1.0,
    form: str = "neglog",
    skipped: int = 0,
) -> float:
    """Mean regularizer over anchors; 0 (with a warning) when no anchor is available.

    Anchors with a zero hidden vector anywhere in their triple are dropped and added
    to `skipped`.
    """
    keep = usable_anchors(h_anchor, h_pos, h_neg)
    if not keep.all():
        skipped += int(np.sum(~keep))
        h_anchor, h_pos, h_neg = h_anchor[keep], h_pos[keep], h_neg[keep]
    if h_anchor.shape[0] == 0:
        logger.warning("contrastive regularizer has no valid anchors skipped=%d", skipped)
        return 0.0
    values, *_ = contrastive_terms(h_anchor, h_pos, h_neg, g_temperature, form)
    return float(values.mean())


def total_loss(
    params: ModelParams,
    X_easy: np.ndarray,
    y_easy: np.ndarray,
    cfg: LossConfig,
    pairing: Optional[Pairing] = None,
    X_hard: Optional[np.ndarray] = None,
) -> float:
    """Mean classification loss over the easy set plus lam times the regularizer, dropout-free.

    Evaluated straight from the public forward functions, independently of the
    backward pass.
    """
    from .network import hidden, predict_proba

    if X_easy.shape[0] == 0:
        raise DomainError("total_loss needs a nonempty easy set")
    probs = predict_proba(params, X_easy)
    values, _ = classification_terms(probs[np.arange(len(y_easy)), y_easy], cfg)
    loss = float(values.mean())
    if cfg.lam == 0 or pairing is None or X_hard is None:
        return loss
    cs = ContrastiveSet.from_pairing(pairing, X_easy, X_hard)
    if len(cs) == 0:
        logger.warning("contrastive regularizer has no valid anchors skipped=%d", pairing.skipped)
        return loss
    n, k, f = cs.negatives.shape
    h_neg = hidden(params, cs.negatives.reshape(n * k, f)).reshape(n, k, -1)
    reg = contrastive_reg(
        hidden(params, cs.anchors),
        hidden(params, cs.positives),
        h_neg,
        cfg.g_temperature,
        cfg.contrastive_form,
        skipped=pairing.skipped,
    )
    return loss + cfg.lam * reg
