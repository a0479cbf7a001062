"""Small classifier standing in for a pretrained encoder.

Pipeline for a feature row x:

    x' = x + mean(pseudo_tokens)                  (ptuning)
    h  = tanh(x' W_b + b)
    h' = h + softmax(h P^T) P                     (prefix)
    h''= h' + relu(h' D + d) U + u                (adapter)
    out = h'' * mask                              (dropout, training / MC only)

Head paradigm scores `out` with a classification head, prompt paradigm with frozen
label embeddings divided by the verbalizer temperature. Gradients are exact.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Sequence

import numpy as np

from framework.errors import ConfigurationError, DataError, DimensionError, NumericError
from models.config import LossConfig, PELConfig
from models.params import Dims, ModelParams, OptState

from .losses import ContrastiveSet, classification_terms, contrastive_terms, usable_anchors
from .numeric import Rng, derive_rng, softmax

logger = logging.getLogger(__name__)

BACKBONE_W = "backbone_w"
BACKBONE_B = "backbone_b"
ADAPTER_DOWN_W = "adapter_down_w"
ADAPTER_DOWN_B = "adapter_down_b"
ADAPTER_UP_W = "adapter_up_w"
ADAPTER_UP_B = "adapter_up_b"
PREFIX = "prefix"
PSEUDO_TOKENS = "pseudo_tokens"
CLS_W = "cls_w"
CLS_B = "cls_b"
LABEL_EMBEDDINGS = "label_embeddings"

ADAPTER_BLOCKS = (ADAPTER_DOWN_W, ADAPTER_DOWN_B, ADAPTER_UP_W, ADAPTER_UP_B)
HEAD_BLOCKS = (CLS_W, CLS_B)
ALL_BLOCKS = (BACKBONE_W, BACKBONE_B, *ADAPTER_BLOCKS, PREFIX, PSEUDO_TOKENS, CLS_W, CLS_B, LABEL_EMBEDDINGS)
# each block draws from its own stream so the initial weights do not depend on the PEL variant
_BLOCK_KEYS = {name: i for i, name in enumerate(ALL_BLOCKS)}
_ZERO_INIT = {BACKBONE_B, ADAPTER_DOWN_B, ADAPTER_UP_W, ADAPTER_UP_B, CLS_B}

INIT_STD = 0.02

Phase = Literal["student", "teacher"]


def block_shapes(pel: PELConfig, features: int, hidden: int, classes: int) -> Dict[str, tuple]:
    shapes: Dict[str, tuple] = {BACKBONE_W: (features, hidden), BACKBONE_B: (hidden,)}
    if pel.variant == "adapter":
        m = pel.bottleneck_dim
        shapes.update({
            ADAPTER_DOWN_W: (hidden, m),
            ADAPTER_DOWN_B: (m,),
            ADAPTER_UP_W: (m, hidden),
            ADAPTER_UP_B: (hidden,),
        })
    elif pel.variant == "prefix":
        shapes[PREFIX] = (pel.prefix_length, hidden)
    elif pel.variant == "ptuning":
        shapes[PSEUDO_TOKENS] = (pel.prefix_length, features)
    if pel.paradigm == "head":
        shapes.update({CLS_W: (hidden, classes), CLS_B: (classes,)})
    else:
        shapes[LABEL_EMBEDDINGS] = (classes, hidden)
    return shapes


def trainable_names(pel: PELConfig, phase: Phase = "student") -> tuple[str, ...]:
    """Blocks updated by the optimizer. Teachers tune everything but the verbalizer."""
    names = []
    if phase == "teacher" or pel.variant == "full":
        names += [BACKBONE_W, BACKBONE_B]
    if pel.variant == "adapter":
        names += ADAPTER_BLOCKS
    elif pel.variant == "prefix":
        names.append(PREFIX)
    elif pel.variant == "ptuning":
        names.append(PSEUDO_TOKENS)
    if pel.paradigm == "head":
        names += HEAD_BLOCKS
    return tuple(names)


def trainable_param_count(pel: PELConfig, features: int, hidden: int, classes: int) -> int:
    """Student trainable parameters; the adapter block alone is 2md + d + m."""
    count = 0
    if pel.variant == "full":
        count += features * hidden + hidden
    elif pel.variant == "adapter":
        m = pel.bottleneck_dim
        count += 2 * m * hidden + hidden + m
    elif pel.variant == "prefix":
        count += pel.prefix_length * hidden
    elif pel.variant == "ptuning":
        count += pel.prefix_length * features
    if pel.paradigm == "head":
        count += classes * hidden + classes
    return count


def init(pel: PELConfig, features: int, hidden: int, classes: int, seed: int) -> ModelParams:
    """Draw the initial weights. Same seed gives the same backbone for every PEL variant."""
    if min(features, hidden, classes) < 1:
        raise DimensionError("dimensions must be >= 1", features=features, hidden=hidden, classes=classes)
    if pel.variant == "adapter" and pel.bottleneck_dim >= hidden:
        raise ConfigurationError(f"adapter bottleneck {pel.bottleneck_dim} must be smaller than hidden width {hidden}")
    arrays = {}
    for name, shape in block_shapes(pel, features, hidden, classes).items():
        if name in _ZERO_INIT:
            arrays[name] = np.zeros(shape)
            continue
        std = 1.0 / math.sqrt(features) if name == BACKBONE_W else INIT_STD
        arrays[name] = _block_rng(seed, name).normal(0.0, std, size=shape)
    logger.debug("init variant=%s paradigm=%s blocks=%s seed=%d", pel.variant, pel.paradigm, sorted(arrays), seed)
    return ModelParams(
        dims=Dims(features=features, hidden=hidden, classes=classes), pel=pel, init_seed=seed, arrays=arrays
    )


def _block_rng(seed: int, name: str) -> Rng:
    return derive_rng(seed, _BLOCK_KEYS[name])


def check_params(params: ModelParams) -> None:
    d = params.dims
    expected = block_shapes(params.pel, d.features, d.hidden, d.classes)
    if set(expected) != set(params.arrays):
        raise ConfigurationError(
            f"parameters do not match {params.pel.label}",
            missing=sorted(set(expected) - set(params.arrays)),
            unexpected=sorted(set(params.arrays) - set(expected)),
        )
    for name, shape in expected.items():
        if params.arrays[name].shape != shape:
            raise DimensionError(f"{name} has shape {params.arrays[name].shape}, expected {shape}")


def fit_verbalizer(params: ModelParams, X: np.ndarray, y: np.ndarray) -> ModelParams:
    """Set label embeddings to the per-class mean hidden vector under the current weights."""
    if params.pel.paradigm != "prompt":
        return params
    y = np.asarray(y)
    out = params.copy()
    h = hidden(params, X)
    for c in range(params.dims.classes):
        rows = h[y == c]
        if rows.shape[0] == 0:
            raise DataError(f"class {c} has no labeled example for the verbalizer", missing_class=c)
        out.arrays[LABEL_EMBEDDINGS][c] = rows.mean(axis=0)
    return out


def dropout_mask(hidden_dim: int, rate: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: kept units carry 1/(1-rate), dropped units 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(hidden_dim) >= rate
    return keep / (1.0 - rate)


@dataclass
class _Cache:
    x_in: np.ndarray
    h: np.ndarray
    attn: Optional[np.ndarray]
    h1: np.ndarray
    q: Optional[np.ndarray]
    mask: Optional[np.ndarray]
    out: np.ndarray


def _as_rows(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = X[None, :] if single else X
    if X.ndim != 2 or X.shape[1] != params.dims.features:
        raise DimensionError(f"expected inputs of dimension {params.dims.features}", shape=list(np.shape(x)))
    return X, single


def _forward(params: ModelParams, X: np.ndarray, mask: Optional[np.ndarray]) -> _Cache:
    a = params.arrays
    variant = params.pel.variant
    x_in = X + a[PSEUDO_TOKENS].mean(axis=0) if variant == "ptuning" else X
    h = np.tanh(x_in @ a[BACKBONE_W] + a[BACKBONE_B])
    attn, h1 = None, h
    if variant == "prefix":
        attn = softmax(h @ a[PREFIX].T)
        h1 = h + attn @ a[PREFIX]
    q, h2 = None, h1
    if variant == "adapter":
        q = h1 @ a[ADAPTER_DOWN_W] + a[ADAPTER_DOWN_B]
        h2 = h1 + np.maximum(q, 0.0) @ a[ADAPTER_UP_W] + a[ADAPTER_UP_B]
    if mask is not None:
        if mask.shape != (params.dims.hidden,):
            raise DimensionError(f"dropout mask must have shape ({params.dims.hidden},)", shape=list(mask.shape))
        h2 = h2 * mask
    return _Cache(x_in=x_in, h=h, attn=attn, h1=h1, q=q, mask=mask, out=h2)


def _logits(params: ModelParams, out: np.ndarray) -> np.ndarray:
    a = params.arrays
    if params.pel.paradigm == "head":
        return out @ a[CLS_W] + a[CLS_B]
    return out @ a[LABEL_EMBEDDINGS].T / params.pel.verbalizer_temperature


def hidden(params: ModelParams, x, dropout_mask: Optional[np.ndarray] = None) -> np.ndarray:
    X, single = _as_rows(params, x)
    out = _forward(params, X, dropout_mask).out
    return out[0] if single else out


def predict_proba(params: ModelParams, x) -> np.ndarray:
    """Dropout-free class probabilities for one row or a batch."""
    check_params(params)
    X, single = _as_rows(params, x)
    probs = softmax(_logits(params, _forward(params, X, None).out))
    return probs[0] if single else probs


def masked_proba(params: ModelParams, X: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    """Probabilities of the masked model defined by `mask` (None means no dropout)."""
    rows, _ = _as_rows(params, X)
    return softmax(_logits(params, _forward(params, rows, mask).out))


def _backward(params: ModelParams, cache: _Cache, d_out: np.ndarray, names: Sequence[str]) -> Dict[str, np.ndarray]:
    a = params.arrays
    variant = params.pel.variant
    g: Dict[str, np.ndarray] = {}

    dh2 = d_out * cache.mask if cache.mask is not None else d_out
    if variant == "adapter":
        relu = np.maximum(cache.q, 0.0)
        g[ADAPTER_UP_W] = relu.T @ dh2
        g[ADAPTER_UP_B] = dh2.sum(axis=0)
        dq = (dh2 @ a[ADAPTER_UP_W].T) * (cache.q > 0)
        g[ADAPTER_DOWN_W] = cache.h1.T @ dq
        g[ADAPTER_DOWN_B] = dq.sum(axis=0)
        dh1 = dh2 + dq @ a[ADAPTER_DOWN_W].T
    else:
        dh1 = dh2

    if variant == "prefix":
        P, attn = a[PREFIX], cache.attn
        d_attn = dh1 @ P.T
        d_scores = attn * (d_attn - np.sum(d_attn * attn, axis=1, keepdims=True))
        g[PREFIX] = attn.T @ dh1 + d_scores.T @ cache.h
        dh = dh1 + d_scores @ P
    else:
        dh = dh1

    dz = dh * (1.0 - cache.h**2)
    if BACKBONE_W in names:
        g[BACKBONE_W] = cache.x_in.T @ dz
        g[BACKBONE_B] = dz.sum(axis=0)
    if variant == "ptuning":
        n_tokens = a[PSEUDO_TOKENS].shape[0]
        dx = (dz @ a[BACKBONE_W].T).sum(axis=0)
        g[PSEUDO_TOKENS] = np.tile(dx / n_tokens, (n_tokens, 1))
    return {name: grad for name, grad in g.items() if name in names}


def grad(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    loss: LossConfig,
    *,
    phase: Phase = "student",
    mask: Optional[np.ndarray] = None,
    contrastive: Optional[ContrastiveSet] = None,
    ids: Optional[Sequence[int]] = None,
) -> tuple[float, Dict[str, np.ndarray]]:
    """Objective value and exact gradients for the trainable blocks.

    The classification term sees `mask`; contrastive hidden vectors are dropout-free.
    """
    check_params(params)
    rows, _ = _as_rows(params, X)
    y = np.asarray(y, dtype=np.int64)
    n = rows.shape[0]
    if n == 0:
        raise DimensionError("gradient needs a nonempty batch")
    names = trainable_names(params.pel, phase)
    a = params.arrays

    cache = _forward(params, rows, mask)
    probs = softmax(_logits(params, cache.out))
    p_true = probs[np.arange(n), y]
    values, d_p = classification_terms(p_true, loss)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        offender = int(ids[bad[0]]) if ids is not None else int(bad[0])
        raise NumericError("non-finite loss", example_id=offender)
    total = float(values.mean())

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    d_logits = (d_p * p_true)[:, None] * (onehot - probs) / n

    grads: Dict[str, np.ndarray] = {}
    if params.pel.paradigm == "head":
        grads[CLS_W] = cache.out.T @ d_logits
        grads[CLS_B] = d_logits.sum(axis=0)
        d_out = d_logits @ a[CLS_W].T
    else:
        d_out = d_logits @ a[LABEL_EMBEDDINGS] / params.pel.verbalizer_temperature
    _accumulate(grads, _backward(params, cache, d_out, names))

    if loss.lam > 0 and contrastive is not None and len(contrastive) > 0:
        n_a, n_neg, f = contrastive.negatives.shape
        stacked = np.concatenate(
            [contrastive.anchors, contrastive.positives, contrastive.negatives.reshape(n_a * n_neg, f)]
        )
        c_cache = _forward(params, stacked, None)
        h_a = c_cache.out[:n_a]
        h_p = c_cache.out[n_a : 2 * n_a]
        h_n = c_cache.out[2 * n_a :].reshape(n_a, n_neg, -1)
        keep = usable_anchors(h_a, h_p, h_n)
        if not keep.all():
            logger.warning("contrastive anchors with a zero hidden vector skipped=%d", int(np.sum(~keep)))
        n_keep = int(keep.sum())
        if n_keep > 0:
            reg, d_a, d_p_, d_n = contrastive_terms(
                h_a[keep], h_p[keep], h_n[keep], loss.g_temperature, loss.contrastive_form
            )
            if not np.all(np.isfinite(reg)):
                raise NumericError("non-finite contrastive term")
            total += loss.lam * float(reg.mean())
            scale = loss.lam / n_keep
            # dropped anchors contribute no gradient to any row of their triple
            full_a = np.zeros_like(h_a)
            full_p = np.zeros_like(h_p)
            full_n = np.zeros_like(h_n)
            full_a[keep], full_p[keep], full_n[keep] = d_a, d_p_, d_n
            d_stacked = np.concatenate([full_a, full_p, full_n.reshape(n_a * n_neg, -1)]) * scale
            _accumulate(grads, _backward(params, c_cache, d_stacked, names))

    return total, {name: grads[name] for name in names if name in grads}


def _accumulate(into: Dict[str, np.ndarray], update: Dict[str, np.ndarray]) -> None:
    for name, g in update.items():
        into[name] = into[name] + g if name in into else g


def init_opt(params: ModelParams, phase: Phase, lr: float, weight_decay: float = 0.0) -> OptState:
    names = trainable_names(params.pel, phase)
    return OptState(
        lr=lr,
        weight_decay=weight_decay,
        m={name: np.zeros_like(params.arrays[name]) for name in names},
        v={name: np.zeros_like(params.arrays[name]) for name in names},
    )


def adamw_step(params: ModelParams, opt: OptState, grads: Dict[str, np.ndarray]) -> tuple[ModelParams, OptState]:
    """One AdamW update (decoupled weight decay, bias-corrected moments), in place."""
    for name, g in grads.items():
        if name not in opt.m or opt.m[name].shape != g.shape or params.arrays[name].shape != g.shape:
            raise DimensionError(f"gradient for {name} does not match the optimizer state")
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for name in sorted(grads):
        g = grads[name]
        m = opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        v = opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * g * g
        p = params.arrays[name]
        if opt.weight_decay:
            p *= 1.0 - opt.lr * opt.weight_decay
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params, opt
