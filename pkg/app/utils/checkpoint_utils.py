# app/utils/checkpoint_utils.py
"""Checkpoints JSON: ModelSpec, parámetros, estado de Adam y estandarización"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union
import json
import logging

import numpy as np
from pydantic import ValidationError

from app.core.errors import CheckpointError, DIWPError
from app.models.artifacts import AdamRecord, ArtifactHeader, CheckpointFile, ParameterRecord, StandardizationRecord
from app.services.diwp_model import DIWPModel, ParameterStore
from app.services.training import AdamState, TrainingState
from app.utils.artifact_utils import ensure_dir

logger = logging.getLogger(__name__)


@dataclass
class LoadedCheckpoint:
    model: DIWPModel
    state: TrainingState
    task: str
    header: ArtifactHeader
    standardization: Optional[StandardizationRecord] = None
    classes: Optional[int] = None


def _records(arrays: Dict[str, np.ndarray]) -> List[ParameterRecord]:
    return [ParameterRecord(name=name, shape=list(arr.shape), values=arr.ravel().tolist())
            for name, arr in arrays.items()]


def _arrays(records: List[ParameterRecord]) -> Dict[str, np.ndarray]:
    return {r.name: np.array(r.values, dtype=np.float64).reshape(r.shape) for r in records}


def save_checkpoint(path: Union[str, Path], model: DIWPModel, state: TrainingState, header: ArtifactHeader,
                    task: str, standardization: Optional[StandardizationRecord] = None,
                    classes: Optional[int] = None) -> Path:
    """Escritura atómica (fichero temporal + rename)"""
    adam = AdamRecord(step=state.adam.step, beta1=state.adam.beta1, beta2=state.adam.beta2, eps=state.adam.eps,
                      m=_records(state.adam.m), v=_records(state.adam.v))
    document = CheckpointFile(
        header=header, task=task, model_spec=model.spec, parameters=_records(model.params.as_dict()),
        step=state.step, skipped_total=state.skipped_total, consecutive_skips=state.consecutive_skips,
        adam=adam, standardization=standardization, classes=classes,
    )
    out = Path(path)
    ensure_dir(out.parent)
    tmp = out.with_suffix(out.suffix + ".tmp")
    try:
        tmp.write_text(document.model_dump_json(indent=1), encoding="utf-8")
        tmp.replace(out)
    except OSError as exc:
        raise CheckpointError(f"No se pudo escribir el checkpoint {out}: {exc}") from exc
    logger.info(f"✅ Checkpoint guardado: {out} (paso {state.step})")
    return out


def load_checkpoint(path: Union[str, Path]) -> LoadedCheckpoint:
    source = Path(path)
    if not source.is_file():
        raise CheckpointError(f"No existe el checkpoint: {source}")
    try:
        document = CheckpointFile.model_validate(json.loads(source.read_text(encoding="utf-8")))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"Checkpoint inválido {source}: {exc}") from exc

    try:
        model = DIWPModel(document.model_spec, ParameterStore(_arrays(document.parameters)))
    except DIWPError as exc:
        raise CheckpointError(f"Checkpoint y ModelSpec no coinciden: {exc.message}") from exc

    if document.adam is not None:
        adam = AdamState(m=_arrays(document.adam.m), v=_arrays(document.adam.v), step=document.adam.step,
                         beta1=document.adam.beta1, beta2=document.adam.beta2, eps=document.adam.eps)
    else:
        adam = AdamState.zeros(model.params)
    state = TrainingState(adam=adam, step=document.step, skipped_total=document.skipped_total,
                          consecutive_skips=document.consecutive_skips)
    logger.info(f"✅ Checkpoint cargado: {source} (paso {document.step})")
    return LoadedCheckpoint(model=model, state=state, task=document.task, header=document.header,
                            standardization=document.standardization, classes=document.classes)
