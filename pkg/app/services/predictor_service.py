# app/services/predictor_service.py
from typing import Any, Dict, List, Optional
import asyncio
import logging

import numpy as np

from app.core.config import settings
from app.core.errors import CheckpointError, DataError
from app.models.responses import PredictiveSummary
from app.services.inference import predict
from app.utils.checkpoint_utils import LoadedCheckpoint, load_checkpoint
from app.utils.data_utils import destandardize_predictions, standardize_features

logger = logging.getLogger(__name__)


class PredictorService:
    """Predicción sobre un checkpoint entrenado, en la escala original de los datos"""

    def __init__(self, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path or settings.CHECKPOINT_PATH
        self.checkpoint: Optional[LoadedCheckpoint] = None

        if self.checkpoint_path:
            try:
                self.checkpoint = load_checkpoint(self.checkpoint_path)
                logger.info(f"✅ Modelo cargado desde '{self.checkpoint_path}'")
            except CheckpointError as e:
                logger.error(f"❌ Error cargando checkpoint: {e.message}")
        else:
            logger.warning("⚠️ CHECKPOINT_PATH no configurado")

    @property
    def ready(self) -> bool:
        return self.checkpoint is not None

    @property
    def input_dim(self) -> int:
        return self.checkpoint.model.spec.input_dim

    def predict_array(self, features: np.ndarray, n_samples: Optional[int] = None, seed: int = 0) -> PredictiveSummary:
        """Estandariza, predice y devuelve media/varianza en la escala original (regresión)"""
        if not self.ready:
            raise CheckpointError("No hay modelo cargado")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.input_dim:
            raise DataError(f"Se esperaban filas de {self.input_dim} características, shape={features.shape}")
        if features.shape[0] > settings.MAX_PREDICT_ROWS:
            raise DataError(f"{features.shape[0]} filas superan el máximo de {settings.MAX_PREDICT_ROWS}")

        norm = self.checkpoint.standardization
        if norm is not None:
            features = standardize_features(features, np.array(norm.feature_mean), np.array(norm.feature_std))
        summary = predict(self.checkpoint.model, features,
                          n_samples=n_samples or settings.DEFAULT_PREDICT_SAMPLES, seed=seed)
        if self.checkpoint.task == "regression" and norm is not None:
            mean, var = destandardize_predictions(np.array(summary.mean), np.array(summary.variance),
                                                  norm.target_mean, norm.target_std)
            summary = summary.model_copy(update={"mean": mean.tolist(), "variance": var.tolist()})
        return summary

    async def predict(self, features: List[List[float]], n_samples: Optional[int] = None,
                      seed: int = 0) -> PredictiveSummary:
        """Ejecuta la predicción en un thread pool para no bloquear el event loop"""
        loop = asyncio.get_event_loop()
        return await loop.run_in_executor(None, lambda: self.predict_array(np.array(features), n_samples, seed))

    async def health_check(self) -> bool:
        return self.ready

    async def get_service_info(self) -> Dict[str, Any]:
        if not self.ready:
            return {"checkpoint_path": self.checkpoint_path, "loaded": False}
        spec = self.checkpoint.model.spec
        return {
            "checkpoint_path": self.checkpoint_path,
            "loaded": True,
            "task": self.checkpoint.task,
            "layers": spec.layer_count,
            "inducing": spec.inducing_count,
            "input_dim": spec.input_dim,
            "step": self.checkpoint.state.step,
        }
