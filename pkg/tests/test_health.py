# tests/test_health.py
from fastapi.testclient import TestClient

from app.core import dependencies
from app.main import app

client = TestClient(app)

def test_root_endpoint():
    """Test endpoint raíz"""
    response = client.get("/")
    assert response.status_code == 200
    data = response.json()
    assert data["service"] == "DIWP Prediction API"
    assert data["version"] == "1.0.0"
    assert data["endpoints"]["predict"] == "/api/v1/predict"

def test_health_live():
    """Test liveness probe"""
    response = client.get("/health/live")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "alive"

def test_health_ready_without_model():
    """Sin checkpoint cargado el readiness probe responde 503"""
    dependencies.set_services(None)
    response = client.get("/health/ready")
    assert response.status_code == 503
    assert response.json()["status"] == "not_ready"

def test_health_degraded_without_model():
    dependencies.set_services(None)
    response = client.get("/health/")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "degraded"
    assert data["services"]["model"] is False
