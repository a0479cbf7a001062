from __future__ import annotations

from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel, Field

from .config import ExperimentConfig
from .example import DatasetSpec

METRICS_FORMAT_VERSION = 1


class EvalMetrics(BaseModel):
    accuracy: float = Field(..., ge=0.0, le=1.0, json_schema_extra={"example": 0.81})
    macro_f1: float = Field(..., ge=0.0, le=1.0, json_schema_extra={"example": 0.79})
    n: int = Field(..., ge=1, description="Number of evaluated examples.", json_schema_extra={"example": 520})


class IterationMetrics(BaseModel):
    """One line of metrics.jsonl. `wall_ms` goes to timings.jsonl instead."""

    iteration: int = Field(..., ge=1, json_schema_extra={"example": 1})
    teacher_acc: float = Field(..., description="Test accuracy of the teacher that pseudo-labeled this iteration.")
    student_acc: float = Field(..., description="Test accuracy of the trained student.")
    macro_f1: float = Field(..., description="Test macro-F1 of the trained student.")
    n_selected: int = Field(..., ge=0, description="Size of the easy set.")
    mean_s_cf: float = Field(..., description="Mean confidence over the scored subset.")
    mean_s_ct: float = Field(..., description="Mean certainty over the scored subset.")
    mean_bald: float = Field(..., description="Mean raw information gain over the scored subset.")
    loss_final: float = Field(..., description="Student loss of the last epoch.")
    pseudo_label_acc: Optional[float] = Field(None, description="Pseudo-label accuracy on the scored subset against held-back gold labels.")
    selected_label_acc: Optional[float] = Field(None, description="Pseudo-label accuracy on the easy set against held-back gold labels.")
    wall_ms: Optional[float] = Field(None, exclude=True, description="Iteration wall time; not part of the deterministic record.")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "iteration": 1,
                    "teacher_acc": 0.74,
                    "student_acc": 0.79,
                    "macro_f1": 0.78,
                    "n_selected": 1008,
                    "mean_s_cf": 0.71,
                    "mean_s_ct": 0.96,
                    "mean_bald": 0.05,
                    "loss_final": 0.31,
                    "pseudo_label_acc": 0.74,
                    "selected_label_acc": 0.86,
                }
            ]
        }
    }


class SeedSummary(BaseModel):
    """One row of summary.csv."""

    seed: int
    teacher_acc: float = Field(..., description="Accuracy of the fine-tuned teacher before self-training.")
    student_acc: float = Field(..., description="Accuracy of the model returned by the loop.")
    macro_f1: float
    gain: float = Field(..., description="student_acc - teacher_acc.")
    trainable_params: int = Field(..., description="Trainable parameter count of the student.")
    iterations_run: int


class RunManifest(BaseModel):
    format_version: int = Field(METRICS_FORMAT_VERSION)
    config: ExperimentConfig = Field(..., description="Fully resolved configuration.")
    revision: str = Field(..., description="Source revision the run was produced with.", json_schema_extra={"example": "a1b2c3d"})
    seeds: List[int] = Field(..., json_schema_extra={"example": [12, 21, 42, 87, 100]})
    dataset: DatasetSpec
    started_at: datetime
    finished_at: Optional[datetime] = None
