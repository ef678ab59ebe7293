# app/main.py
from contextlib import asynccontextmanager
from fastapi import FastAPI, Depends, Request
from fastapi.responses import JSONResponse
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.trustedhost import TrustedHostMiddleware
import logging
import time

from app.core.config import settings, ALLOWED_ORIGINS, ALLOWED_HOSTS, LOG_FORMAT, VERSION
from app.core.dependencies import set_services, verify_api_key
from app.core.errors import DataError, DIWPError
from app.models.responses import ErrorResponse
from app.api.routes import health, prediction

# Configurar logging
logging.basicConfig(
    level=settings.LOG_LEVEL,
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler(),
    ]
)
logger = logging.getLogger(__name__)

# Suprimir logs excesivos de httpx
logging.getLogger("httpx").setLevel(logging.WARNING)

@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    Carga el checkpoint de CHECKPOINT_PATH; si falla, la API arranca igual
    y los endpoints de predicción responden 503.
    """
    startup_start = time.time()
    logger.info(f"🚀 Iniciando DIWP Prediction API v{VERSION}")
    logger.info(f"🌍 Entorno: {settings.ENVIRONMENT}")

    try:
        from app.services.predictor_service import PredictorService

        logger.info("📦 Cargando modelo...")
        predictor = PredictorService()
        set_services(predictor)

        if predictor.ready:
            info = await predictor.get_service_info()
            logger.info(f"✅ Modelo listo ({info['task']}, L={info['layers']}, P_i={info['inducing']})")
        else:
            logger.warning("⚠️ Sin modelo cargado - /api/v1 responderá 503")

        startup_time = (time.time() - startup_start) * 1000
        logger.info(f"🎉 Startup completado en {startup_time:.2f}ms")

    except Exception as e:
        logger.error(f"❌ Error crítico durante startup: {e}")

    yield

    logger.info(f"🔄 Cerrando DIWP Prediction API v{VERSION}")

# Crear aplicación FastAPI
app = FastAPI(
    title="DIWP Prediction API",
    description="""
    **DIWP Prediction API** - Predicción con procesos de Wishart inverso profundos

    ## Funcionalidades

    - 📈 **Regresión**: media y varianza predictiva en la escala original
    - 🏷️ **Clasificación**: probabilidades de clase medias sobre muestras del posterior
    - 🧾 **Modelo**: arquitectura y número de parámetros del checkpoint cargado

    ## Ejemplos de uso

    - Predecir: `POST /api/v1/predict`
    - Info del modelo: `GET /api/v1/model`
    - Health check: `GET /health`
    """,
    version=VERSION,
    lifespan=lifespan,
    docs_url="/docs" if settings.is_development else None,
    redoc_url="/redoc" if settings.is_development else None,
    openapi_url="/openapi.json" if settings.is_development else None
)

# Middleware de seguridad - hosts confiables desde el entorno
if settings.is_production and ALLOWED_HOSTS:
    app.add_middleware(
        TrustedHostMiddleware,
        allowed_hosts=ALLOWED_HOSTS
    )

# CORS - origenes desde el entorno; sin wildcard junto a credentials
app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type", "X-API-Key"],
)


@app.exception_handler(DIWPError)
async def diwp_error_handler(request: Request, exc: DIWPError):
    """Errores del dominio no capturados por las rutas"""
    status = 400 if isinstance(exc, DataError) else 500
    logger.error(f"❌ {exc.error_code} en {request.url.path}: {exc.message}")
    body = ErrorResponse(error=exc.message, detail=exc.detail, error_code=exc.error_code)
    return JSONResponse(status_code=status, content=body.model_dump(mode="json"))

# Incluir routers
app.include_router(
    health.router,
    prefix="/health",
    tags=["🏥 Health Check"]
)

app.include_router(
    prediction.router,
    prefix="/api/v1",
    tags=["📈 Prediction"],
    dependencies=[Depends(verify_api_key)]  # auth de servicio en todos los endpoints de negocio
)

@app.get("/")
async def root():
    """
    🏠 Endpoint raíz - Información del servicio
    """
    return {
        "service": "DIWP Prediction API",
        "version": VERSION,
        "status": "🟢 running",
        "endpoints": {
            "predict": "/api/v1/predict",
            "model": "/api/v1/model",
            "health": "/health",
            "docs": "/docs" if settings.is_development else "disabled_in_production"
        },
        "limits": {
            "max_predict_rows": settings.MAX_PREDICT_ROWS,
            "default_predict_samples": settings.DEFAULT_PREDICT_SAMPLES
        }
    }

# Para development local
if __name__ == "__main__":
    import uvicorn

    logger.info("🔧 Iniciando en modo desarrollo...")
    uvicorn.run(
        "app.main:app",
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.is_development,
        log_level="info",
        access_log=True
    )
