from __future__ import annotations

import os
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_OUTPUT_DIR = os.environ.get("SELFTRAIN_OUTPUT_DIR", "runs")
PROTOCOL_SEEDS = [12, 21, 42, 87, 100]


class PELConfig(BaseModel):
    """Which parameters the student may tune, and how it predicts."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={
            "examples": [
                {"variant": "adapter", "paradigm": "prompt", "bottleneck_dim": 8, "prefix_length": 4, "dropout_rate": 0.1}
            ]
        },
    )

    variant: Literal["full", "adapter", "prefix", "ptuning"] = Field(
        "adapter",
        description="Parameter-efficient variant; 'full' tunes the backbone as well.",
        json_schema_extra={"example": "adapter"},
    )
    paradigm: Literal["head", "prompt"] = Field(
        "prompt",
        description="'head' predicts with a fresh classification head, 'prompt' with frozen label embeddings.",
        json_schema_extra={"example": "prompt"},
    )
    bottleneck_dim: int = Field(
        8, ge=1, description="Adapter bottleneck width m (must be < hidden width).", json_schema_extra={"example": 8}
    )
    prefix_length: int = Field(
        4, ge=1, description="Number I of prefix vectors or pseudo tokens.", json_schema_extra={"example": 4}
    )
    dropout_rate: float = Field(
        0.1, ge=0.0, lt=1.0, description="Hidden-layer dropout used while training.", json_schema_extra={"example": 0.1}
    )
    verbalizer_temperature: float = Field(
        1.0, gt=0.0, description="Scale t_v of the label-embedding scores.", json_schema_extra={"example": 1.0}
    )

    @property
    def label(self) -> str:
        return f"{self.paradigm}-{self.variant}"


class ModelConfig(PELConfig):
    """[model] section: the PEL choice plus the hidden width d."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden_dim: int = Field(64, ge=1, description="Hidden width d of the backbone.", json_schema_extra={"example": 64})

    @model_validator(mode="after")
    def _bottleneck_below_hidden(self) -> "ModelConfig":
        if self.variant == "adapter" and self.bottleneck_dim >= self.hidden_dim:
            raise ValueError(f"adapter bottleneck_dim={self.bottleneck_dim} must be < hidden_dim={self.hidden_dim}")
        return self

    def pel(self) -> PELConfig:
        return PELConfig(**self.model_dump(exclude={"hidden_dim"}))


class UncertaintyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(
        0.4, ge=0.0, le=1.0, description="Balance between confidence (1) and certainty (0).", json_schema_extra={"example": 0.4}
    )
    mc_samples: int = Field(10, ge=1, description="Number T of dropout masks.", json_schema_extra={"example": 10})
    dropout_rate: float = Field(
        0.1, ge=0.0, lt=1.0, description="Dropout rate of the masked models.", json_schema_extra={"example": 0.1}
    )


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["ce", "phce"] = Field("phce", description="Classification loss.", json_schema_extra={"example": "phce"})
    tau: float = Field(10.0, gt=1.0, description="PHCE knee; linear below p = 1/tau.", json_schema_extra={"example": 10.0})
    lam: float = Field(0.1, ge=0.0, description="Weight of the contrastive regularizer.", json_schema_extra={"example": 0.1})
    n_negatives: int = Field(4, ge=1, description="Hard negatives per anchor.", json_schema_extra={"example": 4})
    g_temperature: float = Field(
        1.0, gt=0.0, description="Temperature dividing the cosine similarity.", json_schema_extra={"example": 1.0}
    )
    contrastive_form: Literal["neglog", "literal"] = Field(
        "neglog",
        description="'neglog' minimizes -log of the ratio; 'literal' uses the bare ratio.",
        json_schema_extra={"example": "neglog"},
    )


class LoopConfig(BaseModel):
    """[selftrain] section: the outer loop knobs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(5, ge=0, description="Self-training iterations.", json_schema_extra={"example": 5})
    teacher_epochs: int = Field(100, ge=0, json_schema_extra={"example": 100})
    student_epochs: int = Field(100, ge=0, json_schema_extra={"example": 100})
    selection: Literal["uncertainty", "random", "all"] = Field(
        "uncertainty",
        description="How the easy set is drawn: uncertainty weights, uniform weights, or every example.",
        json_schema_extra={"example": "uncertainty"},
    )
    select_fraction: float = Field(
        0.5, gt=0.0, le=1.0, description="Easy-set size as a fraction of the scored subset.", json_schema_extra={"example": 0.5}
    )
    select_count: Optional[int] = Field(
        None, ge=1, description="Absolute easy-set size; overrides select_fraction.", json_schema_extra={"example": 500}
    )
    subset_size: Optional[int] = Field(
        None, ge=1, description="Unlabeled examples scored per iteration; None uses the whole pool.", json_schema_extra={"example": 1000}
    )
    lr: float = Field(5e-3, gt=0.0, json_schema_extra={"example": 5e-3})
    weight_decay: float = Field(0.01, ge=0.0, json_schema_extra={"example": 0.01})
    batch_size: int = Field(32, ge=1, json_schema_extra={"example": 32})
    pseudo_label_noise: float = Field(
        0.0, ge=0.0, lt=1.0, description="Symmetric noise injected into the selected pseudo labels.", json_schema_extra={"example": 0.3}
    )
    early_stop: bool = Field(True, description="Stop after two consecutive drops in student accuracy.")
    workers: int = Field(1, ge=1, description="Threads for the scoring pass.", json_schema_extra={"example": 1})


class SelfTrainConfig(BaseModel):
    """Everything one self-training run needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    uncertainty: UncertaintyConfig = Field(default_factory=UncertaintyConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    seed: int = Field(42, ge=0, json_schema_extra={"example": 42})

    def n_reliable(self, pool_size: int) -> int:
        if self.loop.selection == "all":
            return pool_size
        if self.loop.select_count is not None:
            return min(self.loop.select_count, pool_size)
        return max(1, int(round(self.loop.select_fraction * pool_size))) if pool_size else 0


class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    source: Literal["synthetic", "jsonl", "csv"] = Field("synthetic", json_schema_extra={"example": "synthetic"})
    path: Optional[str] = Field(None, description="Labeled pool file for jsonl/csv sources.")
    test_path: Optional[str] = Field(None, description="Test file for jsonl/csv sources.")
    label_names: List[str] = Field(default_factory=list, description="Label strings in class-index order.")
    feature_dim: int = Field(4096, ge=2, description="Feature dimension F; a power of two when text is hashed.", json_schema_extra={"example": 4096})
    n_labeled: int = Field(16, ge=1, description="Labeled examples per class.", json_schema_extra={"example": 16})
    classes: int = Field(4, ge=2, description="Synthetic class count C.")
    per_class_n: int = Field(650, ge=1, description="Synthetic examples per class before the train/test split.")
    gen_dim: int = Field(16, ge=1, description="Synthetic feature dimension.")
    sep: float = Field(3.0, gt=0.0, description="Distance between synthetic class means.")
    noise_rate: float = Field(0.0, ge=0.0, lt=1.0, description="Symmetric label noise of the synthetic noisy copy.")
    data_seed: int = Field(0, ge=0, description="Seed of the synthetic draw and of the held-out split for file sources.")

    @model_validator(mode="after")
    def _file_sources_need_paths(self) -> "DataConfig":
        if self.source != "synthetic" and (not self.path or not self.label_names):
            raise ValueError(f"source={self.source} requires data.path and data.label_names")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seeds: List[int] = Field(default_factory=lambda: list(PROTOCOL_SEEDS), min_length=1)
    output_dir: str = Field(DEFAULT_OUTPUT_DIR)
    save_checkpoint: bool = Field(True)


class ExperimentConfig(BaseModel):
    """The resolved config file: one section per module."""

    model_config = ConfigDict(
        frozen=True,
        extra="forbid",
        json_schema_extra={
            "examples": [
                {
                    "data": {"source": "synthetic", "classes": 4, "sep": 3.0},
                    "model": {"variant": "adapter", "paradigm": "prompt", "hidden_dim": 64},
                    "uncertainty": {"alpha": 0.4, "mc_samples": 10},
                    "loss": {"kind": "phce", "tau": 10.0, "lam": 0.1},
                    "selftrain": {"iterations": 5},
                    "run": {"seeds": [12, 21, 42, 87, 100]},
                }
            ]
        },
    )

    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    uncertainty: UncertaintyConfig = Field(default_factory=UncertaintyConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    selftrain: LoopConfig = Field(default_factory=LoopConfig)
    run: RunConfig = Field(default_factory=RunConfig)

    def selftrain_config(self, seed: int) -> SelfTrainConfig:
        return SelfTrainConfig(
            model=self.model, uncertainty=self.uncertainty, loss=self.loss, loop=self.selftrain, seed=seed
        )
