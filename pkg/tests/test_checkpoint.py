import json

import numpy as np
import pytest

from framework.errors import CheckpointVersionError, ConfigurationError, CorruptCheckpointError
from models.config import PELConfig
from services import checkpoint, network

PEL = PELConfig(variant="adapter", paradigm="prompt", bottleneck_dim=3)


@pytest.fixture
def trained(rng):
    params = network.init(PEL, 6, 8, 3, seed=21)
    for name in params.arrays:
        params.arrays[name] = rng.normal(size=params[name].shape)
    return params


class TestCheckpoint:
    def test_round_trip_predicts_identically(self, trained, tmp_path, rng):
        path = checkpoint.save(trained, tmp_path / "ckpt.json", label_names=["a", "b", "c"])
        loaded, names = checkpoint.load(path, expected_pel=PEL)
        X = rng.normal(size=(20, 6))
        assert np.array_equal(network.predict_proba(loaded, X), network.predict_proba(trained, X))
        assert names == ["a", "b", "c"]
        assert loaded.init_seed == 21
        assert not (tmp_path / "ckpt.json.tmp").exists()

    def test_truncated_file(self, trained, tmp_path):
        path = checkpoint.save(trained, tmp_path / "ckpt.json")
        raw = path.read_text()
        path.write_text(raw[: len(raw) // 2])
        with pytest.raises(CorruptCheckpointError):
            checkpoint.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptCheckpointError):
            checkpoint.load(tmp_path / "nope.json")

    def test_wrong_pel_configuration(self, trained, tmp_path):
        path = checkpoint.save(trained, tmp_path / "ckpt.json")
        with pytest.raises(ConfigurationError):
            checkpoint.load(path, expected_pel=PELConfig(variant="prefix", paradigm="prompt"))

    def test_format_version_mismatch(self, trained, tmp_path):
        path = checkpoint.save(trained, tmp_path / "ckpt.json")
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointVersionError):
            checkpoint.load(path)

    def test_tampered_data(self, trained, tmp_path):
        path = checkpoint.save(trained, tmp_path / "ckpt.json")
        doc = json.loads(path.read_text())
        doc["arrays"][network.BACKBONE_W]["data"][0] += 1.0
        path.write_text(json.dumps(doc))
        with pytest.raises(CorruptCheckpointError, match="digest"):
            checkpoint.load(path)

    def test_shape_disagrees_with_data(self, trained, tmp_path):
        path = checkpoint.save(trained, tmp_path / "ckpt.json")
        doc = json.loads(path.read_text())
        doc["arrays"][network.CLS_B] = {"shape": [4], "data": [0.0, 0.0]}
        path.write_text(json.dumps(doc))
        with pytest.raises(CorruptCheckpointError):
            checkpoint.load(path)

    def test_digest_is_order_independent(self, trained):
        reordered = dict(reversed(list(trained.arrays.items())))
        assert checkpoint.array_digest(reordered) == checkpoint.array_digest(trained.arrays)
