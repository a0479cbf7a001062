"""JSON checkpoints: dims, PEL config, init seed and every array, guarded by a digest."""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from framework.errors import (
    CheckpointVersionError,
    ConfigurationError,
    CorruptCheckpointError,
    DimensionError,
)
from models.checkpoint import CHECKPOINT_FORMAT_VERSION, ArrayPayload, CheckpointDocument
from models.config import PELConfig
from models.params import ModelParams

from .network import check_params

logger = logging.getLogger(__name__)


def array_digest(arrays: Dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode("utf-8"))
        h.update(json.dumps(list(a.shape)).encode("utf-8"))
        h.update(a.tobytes())
    return h.hexdigest()


def to_document(params: ModelParams, label_names: Optional[List[str]] = None) -> CheckpointDocument:
    check_params(params)
    return CheckpointDocument(
        format_version=CHECKPOINT_FORMAT_VERSION,
        dims=params.dims,
        pel=params.pel,
        init_seed=params.init_seed,
        label_names=list(label_names or []),
        arrays={
            name: ArrayPayload(shape=list(a.shape), data=a.ravel().tolist()) for name, a in sorted(params.arrays.items())
        },
        digest=array_digest(params.arrays),
    )


def save(params: ModelParams, path: str | Path, label_names: Optional[List[str]] = None) -> Path:
    """Write atomically: the document goes to a sibling temp file that is then renamed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    # repr-precision floats make the round trip bit-exact
    tmp.write_text(to_document(params, label_names).model_dump_json())
    tmp.replace(path)
    logger.info("checkpoint written path=%s digest=%s", path, array_digest(params.arrays)[:12])
    return path


def from_document(doc: CheckpointDocument, expected_pel: Optional[PELConfig] = None) -> ModelParams:
    if doc.format_version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {doc.format_version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            found=doc.format_version,
        )
    if expected_pel is not None and doc.pel != expected_pel:
        raise ConfigurationError(
            f"checkpoint was trained as {doc.pel.label}, not {expected_pel.label}",
            found=doc.pel.model_dump(),
            expected=expected_pel.model_dump(),
        )
    arrays = {}
    for name, payload in doc.arrays.items():
        flat = np.asarray(payload.data, dtype=np.float64)
        if flat.size != int(np.prod(payload.shape, dtype=np.int64)):
            raise CorruptCheckpointError(f"array {name} has {flat.size} entries for shape {payload.shape}")
        arrays[name] = flat.reshape(payload.shape)
    if array_digest(arrays) != doc.digest:
        raise CorruptCheckpointError("checkpoint digest mismatch")
    params = ModelParams(dims=doc.dims, pel=doc.pel, init_seed=doc.init_seed, arrays=arrays)
    try:
        check_params(params)
    except (ConfigurationError, DimensionError) as exc:
        raise CorruptCheckpointError(f"checkpoint arrays do not match its dims: {exc.message}") from exc
    return params


def load(path: str | Path, expected_pel: Optional[PELConfig] = None) -> Tuple[ModelParams, List[str]]:
    """Return (params, label_names). No partial model is ever returned."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise CorruptCheckpointError(f"checkpoint not found: {path}", path=str(path)) from exc
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"checkpoint is not valid JSON: {exc.msg}", path=str(path)) from exc
    if isinstance(header, dict) and header.get("format_version") not in (None, CHECKPOINT_FORMAT_VERSION):
        raise CheckpointVersionError(
            f"checkpoint format {header.get('format_version')} is not supported", found=header.get("format_version")
        )
    try:
        doc = CheckpointDocument.model_validate(header)
    except ValidationError as exc:
        raise CorruptCheckpointError(f"checkpoint fields are invalid: {exc.error_count()} errors", path=str(path)) from exc
    params = from_document(doc, expected_pel)
    logger.info("checkpoint loaded path=%s pel=%s", path, params.pel.label)
    return params, doc.label_names
