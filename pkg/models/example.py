from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .arrays import FloatArray
from .scores import SelectionScores


class Example(BaseModel):
    """One data point. Gold labels of unlabeled examples stay out-of-band in `gold_label`."""

    model_config = ConfigDict(
        arbitrary_types_allowed=True,
        json_schema_extra={
            "examples": [
                {"id": 0, "text": "great movie", "features": [0.0, 0.7071, 0.0, -0.7071], "gold_label": 1}
            ]
        },
    )

    id: int = Field(..., ge=0, description="Stable id, assigned in file order.", json_schema_extra={"example": 0})
    text: Optional[str] = Field(None, description="Raw text, if any.", json_schema_extra={"example": "great movie"})
    features: FloatArray = Field(..., description="Feature vector of dimension F.")
    gold_label: Optional[int] = Field(None, ge=0, description="Gold class index.", json_schema_extra={"example": 1})
    pseudo_label: Optional[int] = Field(None, ge=0, description="Teacher-assigned class index.")
    scores: Optional[SelectionScores] = Field(None, description="Selection scores of the latest scoring pass.")

    @field_validator("features")
    @classmethod
    def _one_dimensional(cls, v):
        if v.ndim != 1:
            raise ValueError(f"features must be a vector, got shape {v.shape}")
        return v


class DatasetSpec(BaseModel):
    model_config = ConfigDict(
        json_schema_extra={
            "examples": [
                {"classes": 2, "label_names": ["negative", "positive"], "feature_dim": 4096, "source": "jsonl"}
            ]
        }
    )

    classes: int = Field(..., ge=2, description="Number of classes C.", json_schema_extra={"example": 2})
    label_names: List[str] = Field(..., description="Distinct label strings in class-index order.")
    feature_dim: int = Field(..., ge=1, description="Feature dimension F.", json_schema_extra={"example": 4096})
    source: Literal["jsonl", "csv", "synthetic"] = Field(..., json_schema_extra={"example": "jsonl"})
    synthetic: Optional[dict] = Field(None, description="Generator parameters when source is synthetic.")

    @field_validator("label_names")
    @classmethod
    def _distinct(cls, v: List[str]) -> List[str]:
        if len(set(v)) != len(v):
            raise ValueError(f"label names must be distinct: {v}")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "DatasetSpec":
        if len(self.label_names) != self.classes:
            raise ValueError(f"{len(self.label_names)} label names for {self.classes} classes")
        return self

    def label_index(self, name: str) -> Optional[int]:
        try:
            return self.label_names.index(name)
        except ValueError:
            return None
