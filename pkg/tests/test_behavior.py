"""Scaled-down behavioral experiments on synthetic 4-class Gaussians (pytest -m slow)."""
import pytest

from services import experiment
from utils.config_file import load_config

pytestmark = pytest.mark.slow

# 4 x 650 examples -> 2080 in the pool; 64 labeled, 2016 unlabeled
BENCHMARK = {
    "data.source": "synthetic",
    "data.classes": 4,
    "data.per_class_n": 650,
    "data.n_labeled": 16,
    "selftrain.iterations": 5,
    "run.save_checkpoint": False,
}


def _mean(tmp_path, name, **overrides):
    config = load_config(overrides={**BENCHMARK, **overrides, "run.output_dir": str(tmp_path / name)})
    summary = experiment.run_experiment(config).summary.set_index("seed")
    return summary.loc["mean"]


def test_self_training_beats_the_teacher(tmp_path):
    ours = _mean(tmp_path, "uncertainty")
    assert 0.70 <= ours["teacher_acc"] <= 0.85
    assert ours["student_acc"] >= ours["teacher_acc"] + 0.03

    random = _mean(tmp_path, "random", **{"selftrain.selection": "random"})
    assert ours["student_acc"] >= random["student_acc"]


def test_phce_tolerates_noisy_pseudo_labels(tmp_path):
    noisy = {"selftrain.pseudo_label_noise": 0.3}
    phce = _mean(tmp_path, "phce", **noisy, **{"loss.kind": "phce", "loss.tau": 10.0})
    ce = _mean(tmp_path, "ce", **noisy, **{"loss.kind": "ce"})
    assert phce["student_acc"] >= ce["student_acc"] - 0.01
