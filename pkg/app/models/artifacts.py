# app/models/artifacts.py
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Optional

from app.core.config import VERSION
from app.models.specs import ModelSpec


class ArtifactHeader(BaseModel):
    """Cabecera de metadatos al inicio de cada artefacto"""
    command: str
    config_hash: str
    seed: int
    version: str = VERSION


class ParameterRecord(BaseModel):
    """Parámetro serializado: nombre, shape y valores en orden fila-mayor"""
    name: str
    shape: List[int] = Field(..., min_length=2, max_length=2)
    values: List[float]

    @model_validator(mode="after")
    def _size_matches(self) -> "ParameterRecord":
        if self.shape[0] * self.shape[1] != len(self.values):
            raise ValueError(f"{self.name}: {len(self.values)} valores para shape {self.shape}")
        return self


class AdamRecord(BaseModel):
    step: int = Field(..., ge=0)
    beta1: float
    beta2: float
    eps: float
    m: List[ParameterRecord]
    v: List[ParameterRecord]


class StandardizationRecord(BaseModel):
    feature_mean: List[float]
    feature_std: List[float]
    target_mean: Optional[float] = None
    target_std: Optional[float] = None


class CheckpointFile(BaseModel):
    """Checkpoint autodescriptivo: ModelSpec, parámetros y estado del optimizador"""
    model_config = ConfigDict(protected_namespaces=())

    header: ArtifactHeader
    task: str
    model_spec: ModelSpec
    parameters: List[ParameterRecord]
    step: int = Field(0, ge=0)
    skipped_total: int = Field(0, ge=0)
    consecutive_skips: int = Field(0, ge=0)
    adam: Optional[AdamRecord] = None
    standardization: Optional[StandardizationRecord] = None
    classes: Optional[int] = None


class SplitManifest(BaseModel):
    """Índices exactos de un split train/test"""
    header: Optional[ArtifactHeader] = None
    source: Optional[str] = None
    n_rows: int = Field(..., ge=1)
    split_index: int = Field(..., ge=0)
    split_count: int = Field(..., ge=1)
    test_fraction: float
    seed: int
    train_indices: List[int]
    test_indices: List[int]

    @model_validator(mode="after")
    def _partition(self) -> "SplitManifest":
        train, test = set(self.train_indices), set(self.test_indices)
        if train & test:
            raise ValueError("train y test no son disjuntos")
        if train | test != set(range(self.n_rows)) or len(train) + len(test) != self.n_rows:
            raise ValueError("train y test no cubren todas las filas")
        return self
