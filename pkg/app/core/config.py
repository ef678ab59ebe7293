# app/core/config.py
import os
from typing import List
from pydantic_settings import BaseSettings

VERSION = "1.0.0"

class Settings(BaseSettings):
    # Entorno y logging
    ENVIRONMENT: str = os.getenv("ENVIRONMENT", "development")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Artefactos (checkpoints, métricas, datos de figuras)
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    DEFAULT_SEED: int = 0

    # Política numérica
    JITTER_LEVELS: str = "1e-10,1e-8,1e-6,1e-4"  # múltiplos de mean(diag)
    SCHUR_FLOOR: float = 1e-8                    # piso relativo de complementos de Schur
    SCHUR_TOLERANCE: float = 1e-6                # negativo tolerado antes de fallar
    GRAD_CLIP_NORM: float = 100.0
    MAX_SKIPPED_STEPS: int = 10

    # Servidor de predicción
    HOST: str = "0.0.0.0"
    PORT: int = int(os.getenv("PORT", 10000))
    CHECKPOINT_PATH: str = os.getenv("CHECKPOINT_PATH", "")
    MAX_PREDICT_ROWS: int = 1000
    DEFAULT_PREDICT_SAMPLES: int = 100

    # Autenticacion de servicio (obligatoria en /api/v1)
    API_KEY: str = os.getenv("API_KEY", "")

    class Config:
        env_file = ".env"
        case_sensitive = True

    @property
    def is_development(self) -> bool:
        return self.ENVIRONMENT == "development"

    @property
    def is_production(self) -> bool:
        return self.ENVIRONMENT == "production"

    @property
    def jitter_levels(self) -> List[float]:
        """Escalado de jitter: siempre se intenta primero sin jitter"""
        levels = [float(v) for v in self.JITTER_LEVELS.split(",") if v.strip()]
        return [0.0] + levels

settings = Settings()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# CORS / Hosts: se calculan fuera del modelo para evitar que pydantic-settings
# intente parsear el valor del entorno como JSON. Formato: separados por coma.
ALLOWED_ORIGINS = [o.strip() for o in os.getenv("ALLOWED_ORIGINS", "").split(",") if o.strip()]
ALLOWED_HOSTS = [h.strip() for h in os.getenv("ALLOWED_HOSTS", "").split(",") if h.strip()]
