"""Tests for FastAPI application."""

import pandas as pd
import pytest
from fastapi.testclient import TestClient

from api.main import app
from api.service import model_service


@pytest.fixture
def client():
    """Create test client."""
    return TestClient(app)


@pytest.fixture
def served(trained_toy, monkeypatch):
    """Serve the toy model; rows are raw feature records from its CSV."""
    trained, _, _, csv_path = trained_toy
    monkeypatch.setattr(model_service, "trained", trained)
    rows = pd.read_csv(csv_path).drop(columns=["label"]).head(5).to_dict(orient="records")
    return trained, rows


@pytest.fixture
def unloaded(tmp_path, monkeypatch):
    """No model in memory and nothing on disk."""
    monkeypatch.setattr(model_service, "trained", None)
    monkeypatch.setattr(model_service, "model_path", tmp_path / "missing.npz")


def test_health_check(client, unloaded):
    """Test health check endpoint."""
    response = client.get("/health")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "healthy"
    assert data["model_loaded"] is False


def test_config_status(client, served):
    """Test config status endpoint."""
    response = client.get("/config")
    assert response.status_code == 200
    data = response.json()
    assert "api_host" in data
    assert data["model"]["loaded"] is True
    assert data["model"]["classes"] == ["a", "b"]


def test_openapi_schema(client):
    """The OpenAPI document describes the predict and explain request bodies."""
    response = client.get("/openapi.json")
    assert response.status_code == 200
    schema = response.json()
    for path, model in (("/predict", "PredictRequest"), ("/explain", "ExplainRequest")):
        body = schema["paths"][path]["post"]["requestBody"]["content"]["application/json"]["schema"]
        assert body["$ref"] == f"#/components/schemas/{model}"
    explain = schema["components"]["schemas"]["ExplainRequest"]
    assert explain["required"] == ["rows"]
    assert set(explain["properties"]) == {"rows", "row", "classes", "threshold"}
    assert explain["properties"]["threshold"]["maximum"] == 1


def test_predict(client, served):
    """Predictions match the in-process model row for row."""
    trained, rows = served
    response = client.post("/predict", json={"rows": rows})
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "success"
    expected = trained.predict_frame(pd.DataFrame(rows))
    assert [p["label"] for p in data["predictions"]] == [p.label for p in expected]
    assert all(len(p["target_strengths"]) == 2 for p in data["predictions"])


def test_explain(client, served):
    """The explanation's predicted class agrees with /predict."""
    _, rows = served
    predicted = client.post("/predict", json={"rows": rows}).json()["predictions"][2]
    response = client.post("/explain", json={"rows": rows, "row": 2, "threshold": 0.1})
    data = response.json()
    assert data["status"] == "success"
    explanation = data["explanation"]
    assert explanation["row"] == 2
    assert explanation["predicted"] == predicted["class_index"]
    assert all(abs(e["weight"]) > 0.1 for e in explanation["edges"])


def test_explain_unknown_class(client, served):
    """Unknown class names come back as an error record."""
    _, rows = served
    data = client.post("/explain", json={"rows": rows, "classes": ["zebra"]}).json()
    assert data["status"] == "error"
    assert data["type"] == "ParameterError"


def test_explain_rejects_bad_threshold(client, served):
    """Thresholds outside [0, 1] fail request validation."""
    _, rows = served
    response = client.post("/explain", json={"rows": rows, "threshold": 2.0})
    assert response.status_code == 422


def test_predict_without_model(client, unloaded):
    """Without a checkpoint the service answers with an error record."""
    data = client.post("/predict", json={"rows": [{"x0": 0.0, "x1": 0.0}]}).json()
    assert data["status"] == "error"
    assert data["type"] == "ModelNotLoadedError"
    assert "missing.npz" in data["error"]


def test_predict_empty_rows(client, served):
    """An empty row list is a data error."""
    data = client.post("/predict", json={"rows": []}).json()
    assert data["status"] == "error"
    assert data["type"] == "DataError"
