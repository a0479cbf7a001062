import numpy as np
import pytest
from fastapi.testclient import TestClient

from framework.errors import CorruptCheckpointError
from models.config import PELConfig
from resources.api import create_app
from services import checkpoint, network

PEL = PELConfig(variant="adapter", paradigm="head", bottleneck_dim=2)


def _saved(tmp_path, features):
    params = network.init(PEL, features, 4, 2, seed=3)
    params.arrays[network.CLS_B] = np.array([0.0, 2.0])
    return params, checkpoint.save(params, tmp_path / f"ckpt_{features}.json", label_names=["neg", "pos"])


@pytest.fixture
def served(tmp_path):
    params, path = _saved(tmp_path, 8)
    return params, TestClient(create_app(path))


class TestHealth:
    def test_health(self, served):
        _, client = served
        body = client.get("/health", params={"echo": "hi"}).json()
        assert body["status"] == 200
        assert body["echo"] == "hi"
        assert body["checkpoint"].endswith("ckpt_8.json")

    def test_health_path_echo(self, served):
        _, client = served
        assert client.get("/health/ping").json()["path_echo"] == "ping"


class TestModel:
    def test_model_info(self, served):
        _, client = served
        body = client.get("/model").json()
        assert body["dims"] == {"features": 8, "hidden": 4, "classes": 2}
        assert body["label_names"] == ["neg", "pos"]
        assert body["trainable_params"] == 2 * 2 * 4 + 4 + 2 + 2 * 4 + 2
        assert body["blocks"]["backbone_w"] == [8, 4]


class TestPredict:
    def test_features(self, served):
        params, client = served
        x = np.linspace(-1, 1, 8)
        body = client.post("/predict", json={"features": x.tolist()}).json()
        np.testing.assert_allclose(body["probs"], network.predict_proba(params, x), atol=1e-12)
        assert body["label"] == int(np.argmax(body["probs"]))
        assert body["label_name"] == ["neg", "pos"][body["label"]]

    def test_text(self, served):
        _, client = served
        response = client.post("/predict", json={"text": "a gripping thriller"})
        assert response.status_code == 200
        assert sum(response.json()["probs"]) == pytest.approx(1.0)

    def test_wrong_feature_length(self, served):
        _, client = served
        assert client.post("/predict", json={"features": [0.0, 1.0]}).status_code == 422

    def test_needs_exactly_one_input(self, served):
        _, client = served
        assert client.post("/predict", json={}).status_code == 422
        assert client.post("/predict", json={"text": "x", "features": [0.0] * 8}).status_code == 422

    def test_text_needs_hashable_feature_space(self, tmp_path):
        _, path = _saved(tmp_path, 6)
        response = TestClient(create_app(path)).post("/predict", json={"text": "hello"})
        assert response.status_code == 400
        assert response.json()["detail"]["error"] == "configuration_error"


def test_unreadable_checkpoint_fails_before_serving(tmp_path):
    (tmp_path / "bad.json").write_text("{", encoding="utf-8")
    with pytest.raises(CorruptCheckpointError):
        create_app(tmp_path / "bad.json")
