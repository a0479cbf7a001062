from __future__ import annotations

from typing import Dict, List

from pydantic import BaseModel, Field

from .config import PELConfig
from .params import Dims

CHECKPOINT_FORMAT_VERSION = 1


class ArrayPayload(BaseModel):
    shape: List[int] = Field(..., description="Array shape.", json_schema_extra={"example": [4096, 64]})
    data: List[float] = Field(..., description="Entries in row-major order.")


class CheckpointDocument(BaseModel):
    format_version: int = Field(CHECKPOINT_FORMAT_VERSION, json_schema_extra={"example": 1})
    dims: Dims
    pel: PELConfig
    init_seed: int = Field(..., ge=0, json_schema_extra={"example": 42})
    label_names: List[str] = Field(default_factory=list, description="Label strings in class-index order.")
    arrays: Dict[str, ArrayPayload]
    digest: str = Field(..., description="sha256 over array names, shapes and data.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "format_version": 1,
                    "dims": {"features": 2, "hidden": 2, "classes": 2},
                    "pel": {"variant": "full", "paradigm": "head"},
                    "init_seed": 42,
                    "label_names": ["negative", "positive"],
                    "arrays": {"cls_b": {"shape": [2], "data": [0.0, 0.0]}},
                    "digest": "3f1c...",
                }
            ]
        }
    }
