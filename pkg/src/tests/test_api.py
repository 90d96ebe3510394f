"""Test cases for the evaluation endpoint."""

import pytest
from fastapi.testclient import TestClient

from api.main import app
from proto_adapt.pretraining import pretrain_source


@pytest.fixture
def client():
    return TestClient(app)


def test_evaluate_checkpoint(client, tiny_config):
    """Test the evaluation endpoint on a saved checkpoint."""
    checkpoint, _ = pretrain_source(tiny_config)
    response = client.post(
        "/api/evaluate",
        json={"checkpoint": str(checkpoint), "dataset": tiny_config.source_data, "domain": "source"},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is True
    assert set(body["per_class"]) == {"class_0", "class_1", "class_2"}
    assert 0.0 <= body["overall"] <= 100.0
    assert "Overall" in body["table"]


def test_evaluate_missing_checkpoint(client, tiny_data, tmp_path):
    """Test the evaluation endpoint with a missing checkpoint."""
    response = client.post(
        "/api/evaluate",
        json={"checkpoint": str(tmp_path / "none.npz"), "dataset": str(tiny_data[1])},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is False
    assert "none.npz" in body["error"]


def test_evaluate_rejects_unknown_domain(client, tiny_data, tmp_path):
    """Test the evaluation endpoint with an unknown domain name."""
    response = client.post(
        "/api/evaluate",
        json={"checkpoint": "x.npz", "dataset": str(tiny_data[1]), "domain": "elsewhere"},
    )
    assert response.status_code == 422
