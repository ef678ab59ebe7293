# app/api/routes/health.py
from fastapi import APIRouter
from fastapi.responses import JSONResponse
import time
import logging

from app.core import dependencies
from app.core.config import settings, VERSION
from app.models.responses import HealthResponse

router = APIRouter()
logger = logging.getLogger(__name__)

@router.get("/", response_model=HealthResponse)
async def health_check():
    """Health check completo del servicio"""
    start_time = time.time()
    predictor = dependencies.predictor_service

    try:
        model_ok = await predictor.health_check() if predictor is not None else False
        service_info = await predictor.get_service_info() if predictor is not None else {}

        processing_time = (time.time() - start_time) * 1000
        return {
            "status": "healthy" if model_ok else "degraded",
            "timestamp": time.time(),
            "services": {"model": model_ok},
            "service_info": service_info,
            "stats": {
                "health_check_time_ms": round(processing_time, 2),
                "config": {
                    "max_predict_rows": settings.MAX_PREDICT_ROWS,
                    "default_predict_samples": settings.DEFAULT_PREDICT_SAMPLES,
                }
            },
            "version": VERSION
        }

    except Exception as e:
        logger.error(f"❌ Error en health check: {e}")
        return {
            "status": "error",
            "timestamp": time.time(),
            "services": {"model": False},
            "service_info": {"error": str(e)},
            "stats": {},
            "version": VERSION
        }

@router.get("/live")
async def liveness_probe():
    """Liveness probe simple"""
    return {
        "status": "alive",
        "timestamp": time.time(),
        "version": VERSION,
        "environment": settings.ENVIRONMENT
    }

@router.get("/ready")
async def readiness_probe():
    """Readiness probe: 503 hasta que haya un modelo cargado"""
    predictor = dependencies.predictor_service
    if predictor is not None and predictor.ready:
        return {"status": "ready", "timestamp": time.time()}
    return JSONResponse(status_code=503, content={"status": "not_ready", "timestamp": time.time()})
