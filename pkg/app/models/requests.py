# app/models/requests.py
from pydantic import BaseModel, Field, field_validator
from typing import List, Optional


class PredictRequest(BaseModel):
    """Request de predicción sobre filas de características en escala original"""
    features: List[List[float]] = Field(..., min_length=1, description="Filas de N_0 características")
    n_samples: Optional[int] = Field(None, ge=1, le=1000, description="Muestras del posterior aproximado")
    seed: int = Field(0, description="Semilla de las muestras")

    @field_validator("features")
    @classmethod
    def _rectangular(cls, rows: List[List[float]]) -> List[List[float]]:
        widths = {len(r) for r in rows}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("todas las filas deben tener el mismo número (>0) de características")
        return rows
