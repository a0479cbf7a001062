from __future__ import annotations

from pydantic import BaseModel, Field


class SelectionScores(BaseModel):
    """Per-example scores of one scoring pass. `weight` is normalized over the pool."""

    confidence: float = Field(
        ..., ge=0.0, le=1.0, description="Mean masked-model probability of the pseudo label (s_cf).",
        json_schema_extra={"example": 0.82},
    )
    certainty: float = Field(
        ..., ge=0.0, le=1.0, description="One minus normalized information gain (s_ct).",
        json_schema_extra={"example": 0.95},
    )
    weight: float = Field(0.0, ge=0.0, description="Fused sampling weight s_i.", json_schema_extra={"example": 0.0011})
    bald_raw: float = Field(..., ge=0.0, description="Information gain before normalization.", json_schema_extra={"example": 0.03})

    model_config = {
        "json_schema_extra": {
            "examples": [{"confidence": 0.82, "certainty": 0.95, "weight": 0.0011, "bald_raw": 0.03}]
        }
    }


class ExampleScore(BaseModel):
    """One line of scores.jsonl."""

    iteration: int = Field(..., ge=1, json_schema_extra={"example": 1})
    id: int = Field(..., ge=0, json_schema_extra={"example": 17})
    pseudo_label: int = Field(..., ge=0, json_schema_extra={"example": 2})
    s_cf: float = Field(..., json_schema_extra={"example": 0.82})
    s_ct: float = Field(..., json_schema_extra={"example": 0.95})
    bald_raw: float = Field(..., json_schema_extra={"example": 0.03})
    weight: float = Field(..., json_schema_extra={"example": 0.0011})
    selected: bool = Field(..., json_schema_extra={"example": True})
