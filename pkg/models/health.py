from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from .config import PELConfig
from .params import Dims


class Health(BaseModel):
    status: int = Field(description="Numeric status code (e.g., 200 for OK)")
    status_message: str = Field(description="Human-readable status message")
    timestamp: str = Field(description="Timestamp in ISO 8601 format (UTC)")
    ip_address: str = Field(description="IP address of the responding service")
    checkpoint: Optional[str] = Field(default=None, description="Path of the served checkpoint")
    echo: str | None = Field(default=None, description="Optional echo (query param)")
    path_echo: str | None = Field(default=None, description="Echo from path param (/health/{path_echo})")

    model_config = {
        "json_schema_extra": {
            "example": {
                "status": 200,
                "status_message": "OK",
                "timestamp": "2025-09-02T12:34:56Z",
                "ip_address": "192.168.1.10",
                "checkpoint": "runs/seed_42/checkpoint.json",
                "echo": "Hello from query",
                "path_echo": "Hello from path",
            }
        }
    }


class ModelInfo(BaseModel):
    dims: Dims
    pel: PELConfig
    label_names: List[str] = Field(default_factory=list, description="Label strings in class-index order")
    trainable_params: int = Field(description="Parameters a student of this configuration tunes")
    blocks: Dict[str, List[int]] = Field(description="Shape of every parameter block")


class PredictRequest(BaseModel):
    text: Optional[str] = Field(default=None, description="Raw text, hashed into the model's feature space")
    features: Optional[List[float]] = Field(default=None, description="Feature vector of dimension F")

    @model_validator(mode="after")
    def _exactly_one_input(self) -> "PredictRequest":
        if (self.text is None) == (self.features is None):
            raise ValueError("give exactly one of 'text' or 'features'")
        return self

    model_config = {"json_schema_extra": {"example": {"text": "a gripping, well acted thriller"}}}


class Prediction(BaseModel):
    probs: List[float] = Field(description="Class probabilities of the dropout-free model")
    label: int = Field(description="Argmax class index")
    label_name: Optional[str] = Field(default=None, description="Label string, when the checkpoint carries names")

    model_config = {
        "json_schema_extra": {"example": {"probs": [0.1, 0.7, 0.1, 0.1], "label": 1, "label_name": "positive"}}
    }
