# app/core/dependencies.py
from fastapi import HTTPException, Header
from typing import Optional
import logging

from app.core.config import settings

# Servicio global (se inicializa en main.py)
predictor_service = None

logger = logging.getLogger(__name__)

async def verify_api_key(x_api_key: Optional[str] = Header(None)):
    """Autenticacion de servicio. Falla cerrado: rechaza si API_KEY no esta
    configurada o si la cabecera X-API-Key no coincide."""
    if not settings.API_KEY or x_api_key != settings.API_KEY:
        raise HTTPException(status_code=403, detail="API key invalida o ausente")

async def get_predictor():
    """Dependency injection: 503 hasta que haya un modelo cargado"""
    if predictor_service is None or not predictor_service.ready:
        raise HTTPException(
            status_code=503,
            detail="Modelo no disponible. Revisa CHECKPOINT_PATH."
        )
    return predictor_service

def set_services(predictor_svc):
    """Configurar servicio global (llamado desde main.py)"""
    global predictor_service
    predictor_service = predictor_svc
    logger.info("✅ Servicios configurados en dependencies")
