"""Experiment runner: datasets per seed, the self-training loop, and the files it leaves behind.

Layout of an output directory:

    manifest.json
    summary.csv
    seed_<n>/metrics.jsonl  timings.jsonl  scores.jsonl  checkpoint.json
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import subprocess
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from framework.errors import ConfigurationError, DataError, SelfTrainError
from models.config import DataConfig, ExperimentConfig
from models.example import DatasetSpec, Example
from models.metrics import RunManifest, SeedSummary
from utils.config_file import with_overrides

from . import checkpoint, data, selftrain

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["seed", "teacher_acc", "student_acc", "macro_f1", "gain", "trainable_params", "iterations_run"]
SWEEP_METRICS = ["teacher_acc", "student_acc", "macro_f1", "gain", "trainable_params", "iterations_run"]


@dataclass(frozen=True)
class Corpus:
    pool: List[Example]
    test: List[Example]
    spec: DatasetSpec


@dataclass(frozen=True)
class ExperimentResult:
    output_dir: Path
    summaries: List[SeedSummary]
    summary: pd.DataFrame


def source_revision() -> str:
    """SELFTRAIN_REVISION if set, else the git HEAD of the working tree, else "unknown"."""
    if os.environ.get("SELFTRAIN_REVISION"):
        return os.environ["SELFTRAIN_REVISION"]
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, check=True, timeout=5, cwd=Path(__file__).resolve().parent,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def load_corpus(cfg: DataConfig) -> Corpus:
    if cfg.source == "synthetic":
        synthetic = data.synth(cfg.classes, cfg.per_class_n, cfg.gen_dim, cfg.sep, cfg.noise_rate, cfg.data_seed)
        pool = synthetic.noisy_pool if cfg.noise_rate > 0 else synthetic.pool
        return Corpus(pool=pool, test=synthetic.test, spec=synthetic.spec)

    spec = DatasetSpec(
        classes=len(cfg.label_names), label_names=list(cfg.label_names), feature_dim=cfg.feature_dim, source=cfg.source
    )
    pool = data.load(cfg.path, cfg.source, spec)
    if cfg.test_path:
        return Corpus(pool=pool, test=data.load(cfg.test_path, cfg.source, spec), spec=spec)
    labeled_rows = [i for i, ex in enumerate(pool) if ex.gold_label is not None]
    if not labeled_rows:
        raise DataError("without data.test_path some records of data.path need a label")
    train_rows, test_rows = train_test_split(
        np.array(labeled_rows),
        test_size=0.2,
        random_state=cfg.data_seed,
        stratify=[pool[i].gold_label for i in labeled_rows],
    )
    # unlabeled records stay in the pool
    held_out = set(int(i) for i in test_rows)
    return Corpus(
        pool=[ex for i, ex in enumerate(pool) if i not in held_out],
        test=[pool[i] for i in sorted(held_out)],
        spec=spec,
    )


def _write_jsonl(path: Path, rows: Sequence[str]) -> None:
    path.write_text("".join(row + "\n" for row in rows), encoding="utf-8")


def run_seed(config: ExperimentConfig, corpus: Corpus, seed: int, out: Path) -> SeedSummary:
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    labeled, unlabeled = data.few_shot_split(corpus.pool, config.data.n_labeled, corpus.spec.classes, seed)
    cfg = config.selftrain_config(seed)
    result = selftrain.run(
        cfg, labeled, unlabeled, corpus.test, corpus.spec.classes, dump_path=out / "failure_state.json"
    )

    _write_jsonl(seed_dir / "metrics.jsonl", [m.model_dump_json() for m in result.history])
    _write_jsonl(
        seed_dir / "timings.jsonl", [json.dumps({"iteration": m.iteration, "wall_ms": m.wall_ms}) for m in result.history]
    )
    _write_jsonl(seed_dir / "scores.jsonl", [s.model_dump_json() for s in result.scores])
    if config.run.save_checkpoint:
        checkpoint.save(result.teacher, seed_dir / "checkpoint.json", corpus.spec.label_names)

    final = selftrain.evaluate(result.teacher, corpus.test)
    summary = SeedSummary(
        seed=seed,
        teacher_acc=result.baseline.accuracy,
        student_acc=final.accuracy,
        macro_f1=final.macro_f1,
        gain=final.accuracy - result.baseline.accuracy,
        trainable_params=result.trainable_params,
        iterations_run=len(result.history),
    )
    logger.info("seed=%d teacher_acc=%.4f student_acc=%.4f gain=%+.4f", seed, summary.teacher_acc, summary.student_acc, summary.gain)
    return summary


def summarize(summaries: Sequence[SeedSummary]) -> pd.DataFrame:
    """One row per seed, then "mean" and "std" rows over the seeds."""
    frame = pd.DataFrame([s.model_dump() for s in summaries], columns=SUMMARY_COLUMNS)
    numeric = frame[SUMMARY_COLUMNS[1:]].astype(float)
    stats = pd.DataFrame([numeric.mean(), numeric.std()])
    stats.insert(0, "seed", ["mean", "std"])
    return pd.concat([frame.astype({"seed": object}), stats], ignore_index=True)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    out = Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(config.data)
    manifest = RunManifest(
        config=config,
        revision=source_revision(),
        seeds=list(config.run.seeds),
        dataset=corpus.spec,
        started_at=datetime.now(timezone.utc),
    )
    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("experiment started out=%s seeds=%s pel=%s", out, manifest.seeds, config.model.label)

    summaries = [run_seed(config, corpus, seed, out) for seed in config.run.seeds]
    summary = summarize(summaries)
    summary.to_csv(out / "summary.csv", index=False)

    manifest.finished_at = datetime.now(timezone.utc)
    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("experiment finished out=%s", out)
    return ExperimentResult(output_dir=out, summaries=summaries, summary=summary)


def grid_points(grid: Mapping[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ConfigurationError("sweep grid must name at least one key, each with at least one value")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def sweep(config: ExperimentConfig, grid: Mapping[str, Sequence[Any]]) -> pd.DataFrame:
    """Run the Cartesian product of `grid` (dotted config keys) one point after another.

    A failing point is recorded with its error and the sweep moves on.
    """
    points = grid_points(grid)
    out = Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, point in enumerate(points):
        row: Dict[str, Any] = {"point": i, **point}
        try:
            point_config = with_overrides(config, {**point, "run.output_dir": str(out / f"point_{i:03d}")})
            summary = run_experiment(point_config).summary
            stats = summary.set_index("seed")
            for column in SWEEP_METRICS:
                row[f"{column}_mean"] = stats.loc["mean", column]
                row[f"{column}_std"] = stats.loc["std", column]
            row.update(status="ok", error="")
        except SelfTrainError as exc:
            logger.error("sweep point %d failed: %s", i, exc.message)
            row.update(status="failed", error=json.dumps(exc.to_dict(), default=str))
        rows.append(row)
    frame = pd.DataFrame(rows)
    frame.to_csv(out / "sweep.csv", index=False)
    logger.info("sweep finished points=%d failed=%d", len(rows), int((frame["status"] == "failed").sum()))
    return frame
