# app/utils/artifact_utils.py
"""Escritura de artefactos: cabecera de metadatos, JSON, stream de métricas y datos numéricos"""
from pathlib import Path
from typing import Dict, IO, Optional, Union
import json
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel

from app.core.errors import DataError
from app.models.artifacts import ArtifactHeader
from app.models.specs import RunConfig

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# "


def make_header(config: RunConfig) -> ArtifactHeader:
    return ArtifactHeader(command=config.command, config_hash=config.config_hash(), seed=config.seed)


def _header_line(header: ArtifactHeader) -> str:
    return header.model_dump_json()


def ensure_dir(path: Union[str, Path]) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"No se pudo crear el directorio {out}: {exc}") from exc
    return out


def write_json(path: Union[str, Path], header: ArtifactHeader, payload: Union[BaseModel, Dict]) -> Path:
    """JSON con la cabecera como primera clave"""
    body = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    document = {"header": header.model_dump(mode="json"), **{k: v for k, v in body.items() if k != "header"}}
    out = Path(path)
    ensure_dir(out.parent)
    out.write_text(json.dumps(document, indent=2, ensure_ascii=False), encoding="utf-8")
    return out


def read_header(path: Union[str, Path]) -> ArtifactHeader:
    """Cabecera de cualquier artefacto (JSON, JSON-lines o texto numérico)"""
    text = Path(path).read_text(encoding="utf-8")
    first = text.splitlines()[0] if text else ""
    if first.startswith(HEADER_PREFIX):
        return ArtifactHeader.model_validate_json(first[len(HEADER_PREFIX):])
    if first.strip() == "{":
        return ArtifactHeader.model_validate(json.loads(text)["header"])
    return ArtifactHeader.model_validate_json(first)


class MetricsWriter:
    """Stream JSON-lines: primera línea cabecera, luego un registro por paso"""

    def __init__(self, path: Union[str, Path], header: ArtifactHeader, append: bool = False):
        self.path = Path(path)
        ensure_dir(self.path.parent)
        resume = append and self.path.exists()
        self._handle: Optional[IO[str]] = open(self.path, "a" if resume else "w", encoding="utf-8")
        if not resume:
            self._handle.write(_header_line(header) + "\n")

    def write(self, record: BaseModel) -> None:
        self._handle.write(record.model_dump_json() + "\n")
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def truncate_metrics(path: Union[str, Path], last_step: int) -> None:
    """Descarta registros posteriores a last_step (reanudación desde checkpoint)"""
    out = Path(path)
    if not out.exists():
        return
    lines = out.read_text(encoding="utf-8").splitlines()
    kept = lines[:1] + [line for line in lines[1:] if json.loads(line)["step"] <= last_step]
    out.write_text("\n".join(kept) + "\n", encoding="utf-8")


def write_matrix(path: Union[str, Path], header: ArtifactHeader, matrix: np.ndarray, label: str = "") -> Path:
    """Matriz numérica en texto plano con la cabecera como comentario"""
    out = Path(path)
    ensure_dir(out.parent)
    comment = _header_line(header) + (f"\n{label}" if label else "")
    np.savetxt(out, np.atleast_2d(matrix), header=comment, comments=HEADER_PREFIX, fmt="%.17g")
    return out


def read_matrix(path: Union[str, Path]) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, comments="#", ndmin=2))


def write_columns(path: Union[str, Path], header: ArtifactHeader, columns: Dict[str, np.ndarray]) -> Path:
    """Columnas con nombre (CSV) precedidas por la cabecera comentada"""
    out = Path(path)
    ensure_dir(out.parent)
    frame = pd.DataFrame({name: pd.Series(np.asarray(values).ravel()) for name, values in columns.items()})
    with open(out, "w", encoding="utf-8") as handle:
        handle.write(HEADER_PREFIX + _header_line(header) + "\n")
        frame.to_csv(handle, index=False, float_format="%.17g")
    return out


def read_columns(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
