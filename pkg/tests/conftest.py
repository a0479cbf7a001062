import numpy as np
import pytest

from models.config import LoopConfig, LossConfig, ModelConfig, SelfTrainConfig, UncertaintyConfig
from services import data


@pytest.fixture(scope="module")
def blobs():
    """Three well separated classes in 8 dimensions."""
    return data.synth(classes=3, per_class_n=60, gen_dim=8, sep=6.0, seed=0)


@pytest.fixture(scope="module")
def split(blobs):
    labeled, unlabeled = data.few_shot_split(blobs.pool, n_per_class=5, classes=3, seed=12)
    return labeled, unlabeled, blobs.test


@pytest.fixture
def small_config():
    """A loop small enough to run in well under a second per iteration."""
    return SelfTrainConfig(
        model=ModelConfig(variant="adapter", paradigm="prompt", hidden_dim=16, bottleneck_dim=4),
        uncertainty=UncertaintyConfig(alpha=0.4, mc_samples=4, dropout_rate=0.1),
        loss=LossConfig(kind="phce", tau=10.0, lam=0.1, n_negatives=2),
        loop=LoopConfig(iterations=2, teacher_epochs=20, student_epochs=10, batch_size=16, lr=1e-2),
        seed=42,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
