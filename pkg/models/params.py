from __future__ import annotations

from typing import Dict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import PELConfig


class Dims(BaseModel):
    model_config = ConfigDict(frozen=True)

    features: int = Field(..., ge=1, description="Input dimension F.", json_schema_extra={"example": 4096})
    hidden: int = Field(..., ge=1, description="Hidden width d.", json_schema_extra={"example": 64})
    classes: int = Field(..., ge=1, description="Class count C.", json_schema_extra={"example": 4})


class ModelParams(BaseModel):
    """Weights of one classifier; `arrays` holds exactly the blocks `pel` calls for."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    dims: Dims
    pel: PELConfig
    init_seed: int = Field(..., ge=0)
    arrays: Dict[str, np.ndarray] = Field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims,
            pel=self.pel,
            init_seed=self.init_seed,
            arrays={name: a.copy() for name, a in self.arrays.items()},
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def has(self, name: str) -> bool:
        return name in self.arrays


class OptState(BaseModel):
    """AdamW moments for the trainable blocks only."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    lr: float = Field(..., gt=0.0)
    beta1: float = Field(0.9)
    beta2: float = Field(0.98)
    eps: float = Field(1e-8)
    weight_decay: float = Field(0.0, ge=0.0)
    step: int = Field(0, ge=0)
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)
