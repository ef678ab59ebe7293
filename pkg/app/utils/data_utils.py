# app/utils/data_utils.py
"""Carga de tablas numéricas, ficheros IDX, splits train/test y estandarización"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple
import gzip
import io
import json
import logging
import math
import re

import numpy as np
import pandas as pd

from app.core.errors import ConfigError, DataError, DataParseError
from app.models.artifacts import ArtifactHeader, SplitManifest
from app.models.specs import SplitSpec

logger = logging.getLogger(__name__)

IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Características P×N₀ y objetivos (reales o índices de clase)"""
    features: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    target_mean: Optional[float] = None
    target_std: Optional[float] = None
    indices: Optional[np.ndarray] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"features debe ser 2-D, shape={self.features.shape}")
        if self.features.shape[0] != self.targets.shape[0]:
            raise DataError(f"{self.features.shape[0]} filas de features y {self.targets.shape[0]} objetivos")
        if np.any(~np.isfinite(self.features)) or np.any(~np.isfinite(self.targets)):
            raise DataError("El dataset contiene valores no finitos")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> int:
        return int(self.targets.max()) + 1 if self.task == "classification" and self.size else 0

    @property
    def output_dim(self) -> int:
        return self.classes if self.task == "classification" else 1


# ---------------------------------------------------------------------------
# lectura
# ---------------------------------------------------------------------------

def _parse_error_line(message: str, line_numbers: List[int]) -> Optional[int]:
    """Línea del fichero a partir de la línea (1-based) que pandas cuenta sin las líneas en blanco"""
    match = re.search(r"line (\d+)", message)
    if not match:
        return None
    index = int(match.group(1)) - 1
    return line_numbers[index] if 0 <= index < len(line_numbers) else None


def load_csv(path: str, target_col: int = -1, delimiter: str = ",", header: bool = False,
             task: str = "regression") -> Dataset:
    """
    Tabla numérica con una columna objetivo.

    Filas irregulares y celdas no numéricas producen DataParseError con el
    número de línea del fichero (1-based, cabecera incluida).
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise DataError(f"No existe el fichero de datos: {path}")
    try:
        text = file_path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"No se pudo leer {path}: {exc}") from exc

    # sin líneas en blanco; line_numbers guarda la línea original de cada una
    kept = [(number, line) for number, line in enumerate(text.splitlines(), start=1) if line.strip()]
    line_numbers = [number for number, _ in kept]
    if len(kept) <= (1 if header else 0):
        raise DataError(f"El fichero {path} no contiene filas")
    try:
        frame = pd.read_csv(io.StringIO("\n".join(line for _, line in kept)), sep=delimiter,
                            header=0 if header else None, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise DataParseError(f"fila irregular en {path}: {exc}",
                             line=_parse_error_line(str(exc), line_numbers)) from exc

    if frame.empty:
        raise DataError(f"El fichero {path} no contiene filas")
    first_row = 1 if header else 0
    missing = frame.isna()
    if missing.any().any():
        row = int(np.flatnonzero(missing.any(axis=1).to_numpy())[0])
        raise DataParseError(f"fila irregular en {path}", line=line_numbers[row + first_row])

    values = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce")).to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = (int(v[0]) for v in np.nonzero(bad))
        raise DataParseError(f"celda no numérica en la columna {col + 1}: {frame.iat[row, col]!r}",
                             line=line_numbers[row + first_row])

    n_cols = values.shape[1]
    if n_cols < 2:
        raise DataError(f"{path}: se necesitan al menos 2 columnas (features + objetivo)")
    target = target_col % n_cols if -n_cols <= target_col < n_cols else None
    if target is None:
        raise ConfigError(f"target_col={target_col} fuera de rango para {n_cols} columnas")
    features = np.delete(values, target, axis=1)
    targets = values[:, target]
    if task == "classification":
        if np.any(targets != np.round(targets)) or np.any(targets < 0):
            raise DataError(f"{path}: las etiquetas de clase deben ser enteros no negativos")
        targets = targets.astype(np.int64)
    logger.info(f"✅ Cargado {path}: {features.shape[0]} filas, {features.shape[1]} características")
    return Dataset(features=features, targets=targets, task=task, source=str(path))


def load_idx(path: str) -> np.ndarray:
    """Array de un fichero IDX (opcionalmente .gz)"""
    file_path = Path(path)
    if not file_path.is_file():
        raise DataError(f"No existe el fichero IDX: {path}")
    opener = gzip.open if file_path.suffix == ".gz" else open
    with opener(file_path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataParseError(f"{path}: número mágico IDX inválido")
    dtype = IDX_DTYPES.get(raw[2])
    if dtype is None:
        raise DataParseError(f"{path}: tipo IDX desconocido 0x{raw[2]:02x}")
    ndim = raw[3]
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">i4", count=ndim, offset=4))
    offset = 4 + 4 * ndim
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise DataParseError(f"{path}: se esperaban {expected} bytes de datos, hay {len(raw) - offset}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).astype(np.float64)


def load_idx_dataset(images_path: str, labels_path: str) -> Dataset:
    """Imágenes IDX aplanadas a filas y etiquetas de clase"""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    features = images.reshape(images.shape[0], -1)
    if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
        raise DataError(f"IDX: {features.shape[0]} imágenes y etiquetas con shape {labels.shape}")
    return Dataset(features=features, targets=labels.astype(np.int64), task="classification", source=images_path)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_indices(n: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Permutación determinista de (seed, split_index); el primer 10% (por defecto) es test"""
    if spec.split_index >= spec.split_count:
        raise ConfigError(f"split_index {spec.split_index} >= split_count {spec.split_count}")
    perm = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.split_index])).permutation(n)
    n_test = int(round(n * spec.test_fraction))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    if test.size == 0 or train.size == 0:
        raise ConfigError(f"Split vacío: {train.size} filas de train, {test.size} de test (N={n})")
    return train, test


def _standardize(train: Dataset, test: Dataset) -> Tuple[Dataset, Dataset]:
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    stats = dict(feature_mean=mean, feature_std=std)
    if train.task == "regression":
        t_mean = float(train.targets.mean())
        t_std = float(train.targets.std()) or 1.0
        stats.update(target_mean=t_mean, target_std=t_std)

    def apply(ds: Dataset) -> Dataset:
        targets = ds.targets
        if ds.task == "regression":
            targets = (targets - stats["target_mean"]) / stats["target_std"]
        return replace(ds, features=(ds.features - mean) / std, targets=targets, **stats)

    return apply(train), apply(test)


def split_from_indices(dataset: Dataset, train_idx: np.ndarray, test_idx: np.ndarray) -> Tuple[Dataset, Dataset]:
    """Subconjuntos estandarizados con estadísticas del train"""
    def subset(idx: np.ndarray) -> Dataset:
        return replace(dataset, features=dataset.features[idx], targets=dataset.targets[idx], indices=idx)

    return _standardize(subset(np.asarray(train_idx)), subset(np.asarray(test_idx)))


def make_split(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(dataset.size, spec)
    logger.info(f"🔄 Split {spec.split_index}/{spec.split_count}: {train_idx.size} train, {test_idx.size} test")
    return split_from_indices(dataset, train_idx, test_idx)


def make_manifest(dataset: Dataset, spec: SplitSpec, header: Optional[ArtifactHeader] = None) -> SplitManifest:
    train_idx, test_idx = split_indices(dataset.size, spec)
    return SplitManifest(header=header, source=dataset.source, n_rows=dataset.size,
                         split_index=spec.split_index, split_count=spec.split_count,
                         test_fraction=spec.test_fraction, seed=spec.seed,
                         train_indices=train_idx.tolist(), test_indices=test_idx.tolist())


def write_manifest(path: str, manifest: SplitManifest) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")


def read_manifest(path: str) -> SplitManifest:
    try:
        return SplitManifest.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise DataError(f"No existe el manifiesto de split: {path}") from exc
    except ValueError as exc:
        raise DataError(f"Manifiesto de split inválido {path}: {exc}") from exc


def split_from_manifest(dataset: Dataset, manifest: SplitManifest) -> Tuple[Dataset, Dataset]:
    if manifest.n_rows != dataset.size:
        raise DataError(f"El manifiesto describe {manifest.n_rows} filas, el dataset tiene {dataset.size}")
    return split_from_indices(dataset, np.array(manifest.train_indices), np.array(manifest.test_indices))


# ---------------------------------------------------------------------------
# escala original
# ---------------------------------------------------------------------------

def destandardize_loglik(loglik_standardized: float, target_std: Optional[float]) -> float:
    """Cambio de variables y = μ + s·z: log p(y) = log p(z) - log s"""
    if target_std is None:
        return loglik_standardized
    return loglik_standardized - math.log(target_std)


def destandardize_predictions(mean: np.ndarray, variance: Optional[np.ndarray], target_mean: Optional[float],
                              target_std: Optional[float]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if target_mean is None or target_std is None:
        return mean, variance
    out_var = None if variance is None else variance * target_std ** 2
    return mean * target_std + target_mean, out_var


def standardize_features(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - mean) / std
