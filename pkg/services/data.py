"""Dataset ingestion, signed feature hashing, few-shot splits and synthetic blobs."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from sklearn.datasets import make_blobs
from sklearn.model_selection import train_test_split

from framework.errors import ConfigurationError, DataError, DimensionError, ParseError
from models.example import DatasetSpec, Example

from .numeric import Rng, derive_rng

logger = logging.getLogger(__name__)

# 64-bit FNV-1a
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN = re.compile(r"[^\W_]+")

SPLIT_STREAM = 2


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


def featurize(text: str, dim: int) -> np.ndarray:
    """Signed hashing into `dim` buckets, then L2 normalization.

    A token's bucket is the low log2(dim) bits of its FNV-1a hash (UTF-8 bytes); bit 63
    picks the sign (set -> -1). Empty text or fully cancelled buckets give the zero vector.
    """
    if dim < 2 or dim & (dim - 1):
        raise ConfigurationError(f"hashing dimension must be a power of two >= 2, got {dim}")
    vec = np.zeros(dim)
    for token in tokenize(text):
        h = fnv1a_64(token.encode("utf-8"))
        vec[h & (dim - 1)] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _record_to_example(record: dict, idx: int, line: int, spec: DatasetSpec) -> Example:
    if "features" in record:
        features = np.asarray(record["features"], dtype=np.float64)
        if features.shape != (spec.feature_dim,):
            raise DimensionError(
                f"line {line}: features have shape {features.shape}, expected ({spec.feature_dim},)", line=line
            )
    elif isinstance(record.get("text"), str):
        features = featurize(record["text"], spec.feature_dim)
    else:
        raise ParseError(f"line {line}: record needs a 'text' string or a 'features' array", line=line)
    gold = None
    label = record.get("label")
    if label not in (None, ""):
        gold = spec.label_index(str(label))
        if gold is None:
            raise DataError(f"line {line}: unknown label {label!r}", line=line, label=str(label))
    return Example(id=idx, text=record.get("text"), features=features, gold_label=gold)


def load(path: str | Path, fmt: str, spec: DatasetSpec) -> List[Example]:
    """Read jsonl ({"text", "label"?} or {"features", "label"?}) or csv (header text,label)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}", path=str(path))
    examples: List[Example] = []
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"line {line_no}: {exc.msg}", line=line_no) from exc
                if not isinstance(record, dict):
                    raise ParseError(f"line {line_no}: expected a JSON object", line=line_no)
                examples.append(_record_to_example(record, len(examples), line_no, spec))
        elif fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "text" not in reader.fieldnames:
                raise ParseError("csv header must contain a 'text' column", line=1)
            for record in reader:
                if None in record:
                    raise ParseError(f"line {reader.line_num}: too many fields", line=reader.line_num)
                examples.append(_record_to_example(record, len(examples), reader.line_num, spec))
        else:
            raise ConfigurationError(f"unknown dataset format {fmt!r}")
    logger.info("loaded path=%s n=%d labeled=%d", path, len(examples), sum(e.gold_label is not None for e in examples))
    return examples


def write_jsonl(examples: Iterable[Example], path: str | Path, spec: DatasetSpec) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            record = {"features": ex.features.tolist()}
            if ex.text is not None:
                record["text"] = ex.text
            if ex.gold_label is not None:
                record["label"] = spec.label_names[ex.gold_label]
            fh.write(json.dumps(record) + "\n")


def stack(examples: Sequence[Example]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, gold labels with -1 for missing, ids)."""
    if not examples:
        return np.empty((0, 0)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    X = np.stack([ex.features for ex in examples])
    y = np.array([-1 if ex.gold_label is None else ex.gold_label for ex in examples], dtype=np.int64)
    ids = np.array([ex.id for ex in examples], dtype=np.int64)
    return X, y, ids


def few_shot_split(
    pool: Sequence[Example], n_per_class: int, classes: int, seed: int
) -> Tuple[List[Example], List[Example]]:
    """Exactly n_per_class labeled examples per class. Every other record, labeled or not, is the remainder."""
    by_class = {c: [i for i, ex in enumerate(pool) if ex.gold_label == c] for c in range(classes)}
    counts = {c: len(members) for c, members in by_class.items()}
    if any(n < n_per_class for n in counts.values()):
        raise DataError(
            f"every class needs at least {n_per_class} labeled examples",
            counts={str(c): n for c, n in counts.items()},
        )
    rng = derive_rng(seed, SPLIT_STREAM)
    chosen = set()
    for c in range(classes):
        chosen.update(int(i) for i in rng.choice(by_class[c], size=n_per_class, replace=False))
    labeled = [ex for i, ex in enumerate(pool) if i in chosen]
    remainder = [ex for i, ex in enumerate(pool) if i not in chosen]
    logger.info("few-shot split seed=%d labeled=%d remainder=%d", seed, len(labeled), len(remainder))
    return labeled, remainder


def inject_label_noise(labels: np.ndarray, classes: int, rate: float, rng: Rng) -> np.ndarray:
    """Flip each label with probability `rate` to a uniformly drawn different class."""
    labels = np.asarray(labels, dtype=np.int64)
    if rate == 0:
        return labels.copy()
    flip = rng.random(labels.size) < rate
    shift = rng.integers(1, classes, size=labels.size)
    return np.where(flip, (labels + shift) % classes, labels)


@dataclass(frozen=True)
class SyntheticData:
    pool: List[Example]
    test: List[Example]
    noisy_pool: List[Example]
    spec: DatasetSpec


def synth(
    classes: int,
    per_class_n: int,
    gen_dim: int,
    sep: float,
    noise_rate: float = 0.0,
    seed: int = 0,
) -> SyntheticData:
    """Unit-covariance Gaussian blobs with pairwise mean distance `sep`, split 80/20."""
    if classes < 2 or sep <= 0 or not 0 <= noise_rate < 1 or per_class_n < 5:
        raise ConfigurationError(
            "synthetic data needs classes >= 2, sep > 0, 0 <= noise_rate < 1, per_class_n >= 5",
            classes=classes, sep=sep, noise_rate=noise_rate, per_class_n=per_class_n,
        )
    if gen_dim < classes:
        raise ConfigurationError(f"gen_dim={gen_dim} must be >= classes={classes} for the simplex layout")
    centers = np.zeros((classes, gen_dim))
    centers[np.arange(classes), np.arange(classes)] = sep / math.sqrt(2.0)
    X, y = make_blobs(
        n_samples=[per_class_n] * classes, n_features=gen_dim, centers=centers, cluster_std=1.0, random_state=seed
    )
    X_pool, X_test, y_pool, y_test = train_test_split(X, y, test_size=0.2, random_state=seed, stratify=y)
    noisy = inject_label_noise(y_pool, classes, noise_rate, derive_rng(seed, SPLIT_STREAM + 1))
    spec = DatasetSpec(
        classes=classes,
        label_names=[f"c{c}" for c in range(classes)],
        feature_dim=gen_dim,
        source="synthetic",
        synthetic={"per_class_n": per_class_n, "gen_dim": gen_dim, "sep": sep, "noise_rate": noise_rate, "seed": seed},
    )
    pool = [Example(id=i, features=x, gold_label=int(c)) for i, (x, c) in enumerate(zip(X_pool, y_pool))]
    offset = len(pool)
    test = [Example(id=offset + i, features=x, gold_label=int(c)) for i, (x, c) in enumerate(zip(X_test, y_test))]
    noisy_pool = [ex.model_copy(update={"gold_label": int(c)}) for ex, c in zip(pool, noisy)]
    return SyntheticData(pool=pool, test=test, noisy_pool=noisy_pool, spec=spec)
