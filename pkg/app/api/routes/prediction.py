# app/api/routes/prediction.py
from fastapi import APIRouter, HTTPException, Depends
import time
import logging

from app.core.dependencies import get_predictor
from app.core.errors import DataError, DIWPError
from app.models.requests import PredictRequest
from app.models.responses import ModelInfoResponse, PredictionResponse

router = APIRouter()
logger = logging.getLogger(__name__)


@router.get("/model", response_model=ModelInfoResponse)
async def model_info(predictor = Depends(get_predictor)):
    """ModelSpec y número de parámetros del checkpoint cargado"""
    checkpoint = predictor.checkpoint
    return ModelInfoResponse(
        model_spec=checkpoint.model.spec.model_dump(mode="json"),
        parameter_count=checkpoint.model.params.parameter_count,
        step=checkpoint.state.step,
        task=checkpoint.task,
        checkpoint_path=predictor.checkpoint_path,
    )


@router.post("/predict", response_model=PredictionResponse)
async def predict_rows(
    request: PredictRequest,
    predictor = Depends(get_predictor)
):
    """Media/varianza predictiva (regresión) o probabilidades de clase por fila"""
    start_time = time.time()

    try:
        logger.info(f"🔄 Prediciendo {len(request.features)} filas")
        summary = await predictor.predict(request.features, request.n_samples, request.seed)

        processing_time = (time.time() - start_time) * 1000
        logger.info(f"✅ Predicción completada en {processing_time:.2f}ms")

        return PredictionResponse(
            processing_time_ms=processing_time,
            task=predictor.checkpoint.task,
            mean=summary.mean,
            variance=summary.variance,
            probabilities=summary.probabilities,
            sample_count=summary.sample_count,
        )

    except DataError as e:
        raise HTTPException(400, e.message)
    except DIWPError:
        raise
    except Exception as e:
        logger.error(f"❌ Error en predicción: {e}")
        raise HTTPException(500, f"Error en predicción: {str(e)}")
