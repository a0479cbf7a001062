"""Teacher-student self-training loop.

Each iteration: sample a subset of the unlabeled pool, pseudo-label it with the dropout-free
teacher, score it with MC dropout, draw the easy set (the rest is the hard set), train a fresh
parameter-efficient student on the easy set, then promote the student to teacher.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, f1_score

from framework.errors import DataError, ProcedureError, SelectionError, SelfTrainError
from models.config import LossConfig, SelfTrainConfig
from models.example import Example
from models.metrics import EvalMetrics, IterationMetrics
from models.params import ModelParams
from models.scores import ExampleScore

from . import network
from .data import inject_label_noise, stack
from .losses import ContrastiveSet, build_pairing, nonzero_rows, total_loss
from .numeric import derive_rng, weighted_sample_without_replacement
from .uncertainty import PoolScores, score_pool

logger = logging.getLogger(__name__)

TEACHER_STREAM = 10
STUDENT_STREAM = 11
PAIR_STREAM = 12
SELECT_STREAM = 13
SUBSET_STREAM = 14
NOISE_STREAM = 15

TEACHER_LOSS = LossConfig(kind="ce", lam=0.0)


@dataclass
class Selection:
    easy: np.ndarray  # row indices into the scored subset
    hard: np.ndarray
    scores: PoolScores


@dataclass
class SelfTrainState:
    base: ModelParams  # initial model, verbalizer fitted
    teacher: ModelParams
    labeled: List[Example]
    unlabeled: List[Example]
    classes: int
    student: Optional[ModelParams] = None
    subset: List[Example] = field(default_factory=list)
    easy_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    hard_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    iteration: int = 0
    history: List[IterationMetrics] = field(default_factory=list)

    def dump(self) -> dict:
        return {
            "iteration": self.iteration,
            "labeled": len(self.labeled),
            "unlabeled": len(self.unlabeled),
            "subset": len(self.subset),
            "easy": int(self.easy_ids.size),
            "hard": int(self.hard_ids.size),
            "history": [m.model_dump() for m in self.history],
        }


@dataclass
class SelfTrainResult:
    teacher: ModelParams
    baseline: EvalMetrics
    history: List[IterationMetrics]
    scores: List[ExampleScore]
    trainable_params: int


def _fit(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    ids: np.ndarray,
    cfg: SelfTrainConfig,
    *,
    loss: LossConfig,
    phase: network.Phase,
    epochs: int,
    stream: int,
    iteration: int,
    X_hard: Optional[np.ndarray] = None,
    y_hard: Optional[np.ndarray] = None,
) -> List[float]:
    """Minibatch AdamW over (X, y) in place; returns the mean loss of every epoch."""
    loop = cfg.loop
    opt = network.init_opt(params, phase, loop.lr, loop.weight_decay)
    rate = cfg.model.dropout_rate
    contrastive = loss.lam > 0 and X_hard is not None and X_hard.shape[0] > 0
    if loss.lam > 0 and not contrastive:
        logger.warning("contrastive regularizer disabled: hard set is empty iteration=%d", iteration)
    curve: List[float] = []
    n = X.shape[0]
    for epoch in range(epochs):
        rng = derive_rng(cfg.seed, stream, iteration, epoch)
        order = rng.permutation(n)
        pairing = None
        if contrastive:
            pairing = build_pairing(
                y,
                y_hard,
                loss.n_negatives,
                derive_rng(cfg.seed, PAIR_STREAM, iteration, epoch),
                easy_usable=nonzero_rows(network.hidden(params, X)),
                hard_usable=nonzero_rows(network.hidden(params, X_hard)),
            )
            if epoch == 0 and len(pairing) == 0:
                logger.warning("no valid contrastive anchors skipped=%d iteration=%d", pairing.skipped, iteration)
        total = 0.0
        for start in range(0, n, loop.batch_size):
            rows = order[start : start + loop.batch_size]
            mask = network.dropout_mask(params.dims.hidden, rate, rng) if rate > 0 else None
            cs = ContrastiveSet.from_pairing(pairing.restrict(rows), X, X_hard) if pairing is not None else None
            value, grads = network.grad(
                params, X[rows], y[rows], loss, phase=phase, mask=mask, contrastive=cs, ids=ids[rows]
            )
            network.adamw_step(params, opt, grads)
            total += value * rows.size
        curve.append(total / n)
        logger.debug("phase=%s iteration=%d epoch=%d loss=%.6f", phase, iteration, epoch, curve[-1])
    return curve


def fine_tune_teacher(state: SelfTrainState, cfg: SelfTrainConfig) -> ModelParams:
    """Plain CE on the labeled set with every block but the verbalizer trainable."""
    X, y, ids = stack(state.labeled)
    if X.shape[0] == 0:
        raise DataError("labeled set is empty")
    for c in range(state.classes):
        if not np.any(y == c):
            raise DataError(f"class {c} is absent from the labeled set", missing_class=c)
    teacher = state.base.copy()
    curve = _fit(
        teacher, X, y, ids, cfg,
        loss=TEACHER_LOSS, phase="teacher", epochs=cfg.loop.teacher_epochs, stream=TEACHER_STREAM, iteration=0,
    )
    if curve:
        logger.info("teacher fine-tuned epochs=%d loss_final=%.6f", len(curve), curve[-1])
    state.teacher = teacher
    return teacher


def pseudo_annotate(teacher: ModelParams, X: np.ndarray) -> np.ndarray:
    """Argmax of the dropout-free teacher; ties go to the lowest class index."""
    if X.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    return np.argmax(network.predict_proba(teacher, X), axis=1).astype(np.int64)


def _class_quotas(pseudo: np.ndarray, n_reliable: int) -> dict[int, int]:
    classes, sizes = np.unique(pseudo, return_counts=True)
    base, extra = divmod(n_reliable, classes.size)
    quotas = {int(c): base for c in classes}
    # remainder goes to the largest classes, lower index first on ties
    for c in sorted(quotas, key=lambda c: (-int(sizes[classes == c][0]), c))[:extra]:
        quotas[c] += 1
    return quotas


def stratified_sample(weights: np.ndarray, pseudo: np.ndarray, n_reliable: int, rng) -> np.ndarray:
    """Even per-class quotas; falls back to one global draw when a class cannot fill its quota."""
    quotas = _class_quotas(pseudo, n_reliable)
    members = {c: np.flatnonzero(pseudo == c) for c in quotas}
    if any(np.count_nonzero(weights[members[c]] > 0) < q for c, q in quotas.items()):
        logger.info("class pool below quota; sampling globally n_reliable=%d", n_reliable)
        return weighted_sample_without_replacement(weights, n_reliable, rng)
    picked = [members[c][weighted_sample_without_replacement(weights[members[c]], q, rng)] for c, q in quotas.items()]
    return np.sort(np.concatenate(picked))


def select_reliable(
    teacher: ModelParams,
    X: np.ndarray,
    pseudo: np.ndarray,
    cfg: SelfTrainConfig,
    iteration: int,
) -> Selection:
    """Score the subset and split it into the easy and hard sets."""
    n = X.shape[0]
    n_reliable = cfg.n_reliable(n)
    if n_reliable > n:
        raise SelectionError(f"n_reliable={n_reliable} exceeds the subset size {n}")
    scores = score_pool(
        teacher, X, pseudo,
        T=cfg.uncertainty.mc_samples, rate=cfg.uncertainty.dropout_rate, alpha=cfg.uncertainty.alpha,
        seed=cfg.seed, iteration=iteration, workers=cfg.loop.workers,
    )
    if n_reliable == n:
        easy = np.arange(n)
    else:
        weights = scores.weight if cfg.loop.selection == "uncertainty" else np.full(n, 1.0 / n)
        easy = stratified_sample(weights, pseudo, n_reliable, derive_rng(cfg.seed, SELECT_STREAM, iteration))
    hard = np.setdiff1d(np.arange(n), easy)
    logger.info("selected iteration=%d easy=%d hard=%d strategy=%s", iteration, easy.size, hard.size, cfg.loop.selection)
    return Selection(easy=easy, hard=hard, scores=scores)


def train_student(
    state: SelfTrainState,
    cfg: SelfTrainConfig,
    X_easy: np.ndarray,
    y_easy: np.ndarray,
    X_hard: np.ndarray,
    y_hard: np.ndarray,
    iteration: int,
    ids: Optional[np.ndarray] = None,
) -> tuple[ModelParams, List[float]]:
    """Fresh copy of the initial model; only the PEL-designated blocks are optimized."""
    if X_easy.shape[0] == 0:
        raise ProcedureError("the easy set is empty; nothing to train the student on")
    student = state.base.copy()
    ids = np.arange(X_easy.shape[0]) if ids is None else ids
    curve = _fit(
        student, X_easy, y_easy, ids, cfg,
        loss=cfg.loss, phase="student", epochs=cfg.loop.student_epochs, stream=STUDENT_STREAM,
        iteration=iteration, X_hard=X_hard, y_hard=y_hard,
    )
    state.student = student
    return student, curve


def evaluate(params: ModelParams, examples: Sequence[Example]) -> EvalMetrics:
    """Accuracy and macro-F1 over the classes that occur in gold labels or predictions."""
    X, y, _ = stack(examples)
    if X.shape[0] == 0:
        raise DataError("evaluation set is empty")
    if np.any(y < 0):
        raise DataError("evaluation set has examples without gold labels", missing=int(np.sum(y < 0)))
    pred = pseudo_annotate(params, X)
    labels = np.union1d(y, pred).tolist()
    return EvalMetrics(
        accuracy=float(accuracy_score(y, pred)),
        macro_f1=float(f1_score(y, pred, labels=labels, average="macro", zero_division=0)),
        n=int(y.size),
    )


def _sample_subset(unlabeled: List[Example], cfg: SelfTrainConfig, iteration: int) -> List[Example]:
    size = cfg.loop.subset_size
    if size is None or size >= len(unlabeled):
        return list(unlabeled)
    rows = np.sort(derive_rng(cfg.seed, SUBSET_STREAM, iteration).choice(len(unlabeled), size=size, replace=False))
    return [unlabeled[i] for i in rows]


def _label_accuracy(pred: np.ndarray, gold: np.ndarray) -> Optional[float]:
    known = gold >= 0
    if pred.size == 0 or not np.any(known):
        return None
    return float(np.mean(pred[known] == gold[known]))


def _two_consecutive_drops(accs: List[float]) -> bool:
    return len(accs) >= 3 and accs[-1] < accs[-2] < accs[-3]


def run(
    cfg: SelfTrainConfig,
    labeled: List[Example],
    unlabeled: List[Example],
    test: List[Example],
    classes: int,
    dump_path: Optional[Path] = None,
) -> SelfTrainResult:
    """The full loop; returns the final teacher and one metrics record per iteration."""
    X_l, y_l, _ = stack(labeled)
    if X_l.shape[0] == 0:
        raise DataError("labeled set is empty")
    pel = cfg.model.pel()
    base = network.init(pel, X_l.shape[1], cfg.model.hidden_dim, classes, cfg.seed)
    for c in range(classes):
        if not np.any(y_l == c):
            raise DataError(f"class {c} is absent from the labeled set", missing_class=c)
    base = network.fit_verbalizer(base, X_l, y_l)
    state = SelfTrainState(base=base, teacher=base.copy(), labeled=labeled, unlabeled=unlabeled, classes=classes)

    teacher = fine_tune_teacher(state, cfg)
    baseline = evaluate(teacher, test)
    logger.info("teacher baseline accuracy=%.4f macro_f1=%.4f", baseline.accuracy, baseline.macro_f1)

    exported: List[ExampleScore] = []
    accs = [baseline.accuracy]
    for k in range(1, cfg.loop.iterations + 1):
        state.iteration = k
        started = time.perf_counter()
        try:
            record, scores = _iterate(state, cfg, test, k)
        except SelfTrainError as exc:
            _dump(state, dump_path, exc)
            raise ProcedureError(f"iteration {k} failed: {exc.message}", iteration=k, cause=exc.to_dict()) from exc
        record.wall_ms = (time.perf_counter() - started) * 1000.0
        state.history.append(record)
        exported.extend(scores)
        logger.info(
            "iteration=%d teacher_acc=%.4f student_acc=%.4f n_selected=%d loss_final=%.6f",
            k, record.teacher_acc, record.student_acc, record.n_selected, record.loss_final,
        )
        state.teacher = state.student.copy()
        accs.append(record.student_acc)
        if cfg.loop.early_stop and _two_consecutive_drops(accs):
            logger.warning("early stop after two consecutive accuracy drops iteration=%d", k)
            break

    return SelfTrainResult(
        teacher=state.teacher,
        baseline=baseline,
        history=state.history,
        scores=exported,
        trainable_params=network.trainable_param_count(pel, X_l.shape[1], cfg.model.hidden_dim, classes),
    )


def _iterate(
    state: SelfTrainState, cfg: SelfTrainConfig, test: List[Example], k: int
) -> tuple[IterationMetrics, List[ExampleScore]]:
    subset = _sample_subset(state.unlabeled, cfg, k)
    X_sub, gold_sub, ids_sub = stack(subset)
    if X_sub.shape[0] == 0:
        raise SelectionError("unlabeled pool is empty")
    teacher = state.teacher
    pseudo = pseudo_annotate(teacher, X_sub)
    selection = select_reliable(teacher, X_sub, pseudo, cfg, k)
    score_models = selection.scores.to_models()
    state.subset = [
        ex.model_copy(update={"pseudo_label": int(p), "scores": s}) for ex, p, s in zip(subset, pseudo, score_models)
    ]
    state.easy_ids = ids_sub[selection.easy]
    state.hard_ids = ids_sub[selection.hard]

    y_easy = pseudo[selection.easy]
    if cfg.loop.pseudo_label_noise > 0:
        y_easy = inject_label_noise(
            y_easy, state.classes, cfg.loop.pseudo_label_noise, derive_rng(cfg.seed, NOISE_STREAM, k)
        )
    X_easy, X_hard = X_sub[selection.easy], X_sub[selection.hard]
    student, curve = train_student(
        state, cfg, X_easy, y_easy, X_hard, pseudo[selection.hard], k, ids=state.easy_ids
    )
    loss_final = curve[-1] if curve else total_loss(student, X_easy, y_easy, cfg.loss)
    student_eval = evaluate(student, test)
    teacher_eval = evaluate(teacher, test)

    selected = np.zeros(X_sub.shape[0], dtype=bool)
    selected[selection.easy] = True
    sc = selection.scores
    scores = [
        ExampleScore(
            iteration=k, id=int(i), pseudo_label=int(p), s_cf=cf, s_ct=ct, bald_raw=b, weight=w, selected=bool(sel)
        )
        for i, p, cf, ct, b, w, sel in zip(
            ids_sub.tolist(), pseudo.tolist(), sc.confidence.tolist(), sc.certainty.tolist(),
            sc.bald_raw.tolist(), sc.weight.tolist(), selected.tolist(),
        )
    ]
    record = IterationMetrics(
        iteration=k,
        teacher_acc=teacher_eval.accuracy,
        student_acc=student_eval.accuracy,
        macro_f1=student_eval.macro_f1,
        n_selected=int(selection.easy.size),
        mean_s_cf=float(sc.confidence.mean()),
        mean_s_ct=float(sc.certainty.mean()),
        mean_bald=float(sc.bald_raw.mean()),
        loss_final=float(loss_final),
        pseudo_label_acc=_label_accuracy(pseudo, gold_sub),
        selected_label_acc=_label_accuracy(y_easy, gold_sub[selection.easy]),
    )
    return record, scores


def _dump(state: SelfTrainState, path: Optional[Path], exc: SelfTrainError) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"state": state.dump(), "error": exc.to_dict()}, indent=2, default=str))
    logger.error("iteration failed; state dumped to %s", path)
