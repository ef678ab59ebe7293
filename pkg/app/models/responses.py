# app/models/responses.py
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Optional, Dict, Any
from datetime import datetime


class ElboReport(BaseModel):
    """Descomposición del ELBO de un minibatch"""
    total: float = Field(..., description="ELBO estimado")
    expected_loglik: float = Field(..., description="Log-verosimilitud esperada del batch (sin escalar)")
    layer_names: List[str] = Field(..., description="Capas con término log P - log Q")
    layer_terms: List[float] = Field(..., description="log P - log Q medio por capa")
    minibatch_scale: float = Field(..., gt=0, description="Tamaño del dataset / tamaño del batch")
    sample_count: int = Field(..., ge=1)
    batch_size: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _consistent_total(self) -> "ElboReport":
        if len(self.layer_names) != len(self.layer_terms):
            raise ValueError("layer_names y layer_terms deben tener la misma longitud")
        expected = self.minibatch_scale * self.expected_loglik + sum(self.layer_terms)
        if abs(expected - self.total) > 1e-8 * max(1.0, abs(self.total)):
            raise ValueError(f"total={self.total} no coincide con la descomposición ({expected})")
        return self

    @property
    def kl_terms(self) -> Dict[str, float]:
        return dict(zip(self.layer_names, self.layer_terms))


class PredictiveSummary(BaseModel):
    """Predicción por punto a partir de S muestras del posterior aproximado"""
    loglik: List[float] = Field(..., description="log-media-exp por punto (escala estandarizada)")
    mean: List[List[float]] = Field(..., description="Media predictiva por punto y salida")
    variance: Optional[List[List[float]]] = Field(None, description="Varianza predictiva (regresión)")
    probabilities: Optional[List[List[float]]] = Field(None, description="Probabilidades medias (clasificación)")
    accuracy: Optional[float] = Field(None, ge=0, le=1)
    sample_count: int = Field(..., ge=1)

    @property
    def mean_loglik(self) -> float:
        return sum(self.loglik) / len(self.loglik) if self.loglik else float("nan")


class EvaluationSummary(BaseModel):
    """Resumen final de entrenamiento/evaluación"""
    task: str
    test_loglik: float = Field(..., description="Log-verosimilitud predictiva media (escala original)")
    test_loglik_standardized: float
    test_rmse: Optional[float] = None
    test_accuracy: Optional[float] = None
    train_elbo: float = Field(..., description="ELBO por punto en el conjunto de entrenamiento")
    sample_count: int
    test_points: int
    train_points: int


class MetricsRecord(BaseModel):
    """Línea del stream de métricas"""
    step: int
    lr: float
    elbo: Optional[float] = Field(None, description="None si el paso se saltó")
    loglik: Optional[float] = None
    kl_terms: Dict[str, float]
    skipped: int = Field(0, ge=0, description="Pasos saltados acumulados")


class KernelConsistencyReport(BaseModel):
    family: str
    size: int
    marginalization_exact: bool
    permutation_exact: bool
    max_marginalization_error: float
    max_permutation_error: float


class TimingRow(BaseModel):
    inducing: int
    points: int
    seconds: float = Field(..., ge=0)
    peak_bytes: int = Field(..., ge=0)


class ComplexityReport(BaseModel):
    """Tiempos medidos de elbo_batch y exponentes ajustados por mínimos cuadrados"""
    rows: List[TimingRow]
    points_exponent: Optional[float] = Field(None, description="Exponente de tiempo frente a P_t")
    inducing_exponent: Optional[float] = Field(None, description="Exponente de tiempo frente a P_i")
    memory_points_exponent: Optional[float] = None
    memory_inducing_exponent: Optional[float] = None


class PredictionResponse(BaseModel):
    """Respuesta de /api/v1/predict"""
    success: bool = True
    processing_time_ms: float = Field(..., ge=0, description="Tiempo de procesamiento en ms")
    timestamp: datetime = Field(default_factory=datetime.now)

    task: str
    mean: List[List[float]]
    variance: Optional[List[List[float]]] = None
    probabilities: Optional[List[List[float]]] = None
    sample_count: int


class ModelInfoResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_spec: Dict[str, Any]
    parameter_count: int
    step: int
    task: str
    checkpoint_path: str


class HealthResponse(BaseModel):
    """Respuesta de health check"""
    status: str = Field(..., description="Estado general del servicio")
    timestamp: datetime = Field(default_factory=datetime.now)

    services: Dict[str, bool] = Field(..., description="Estado de los componentes")
    service_info: Dict[str, Any] = Field(default_factory=dict)

    stats: Dict[str, Any] = Field(default_factory=dict)
    version: str = "1.0.0"


class ErrorResponse(BaseModel):
    """Respuesta de error"""
    success: bool = False
    error: str = Field(..., description="Mensaje de error")
    detail: Optional[str] = Field(None, description="Detalle adicional del error")
    timestamp: datetime = Field(default_factory=datetime.now)
    error_code: Optional[str] = Field(None, description="Código de error")
