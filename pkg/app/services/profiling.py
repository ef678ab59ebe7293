# app/services/profiling.py
"""Medición empírica del coste de elbo_batch frente a P_t y P_i"""
from typing import List, Optional, Sequence
import logging
import time
import tracemalloc

import numpy as np

from app.core.autodiff import Tape, derive_seed, scale
from app.models.responses import ComplexityReport, TimingRow
from app.models.specs import KernelSpec, ModelSpec, Propagation
from app.services.diwp_model import DIWPModel
from app.services.inference import elbo_batch

logger = logging.getLogger(__name__)

PROBE_INPUT_DIM = 4


def synthetic_regression(points: int, input_dim: int = PROBE_INPUT_DIM, seed: int = 0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, points]))
    x = rng.standard_normal((points, input_dim))
    y = np.sin(x.sum(axis=1, keepdims=True)) + 0.1 * rng.standard_normal((points, 1))
    return x, y


def time_elbo_step(model: DIWPModel, x: np.ndarray, y: np.ndarray, repeats: int = 3, seed: int = 0) -> TimingRow:
    """Mejor tiempo de ELBO + backward y pico de memoria (tracemalloc) sobre `repeats` ejecuciones"""
    best = float("inf")
    peak = 0
    for r in range(repeats):
        tape = Tape(derive_seed(seed, r))
        tracemalloc.start()
        start = time.perf_counter()
        elbo, _ = elbo_batch(model, x, y, x.shape[0], 1, tape)
        tape.backward(scale(elbo, -1.0))
        best = min(best, time.perf_counter() - start)
        peak = max(peak, tracemalloc.get_traced_memory()[1])
        tracemalloc.stop()
    return TimingRow(inducing=model.spec.inducing_count, points=x.shape[0], seconds=best, peak_bytes=peak)


def fit_exponent(sizes: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Pendiente de mínimos cuadrados en escala log-log"""
    sizes = np.asarray(sizes, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = values > 0
    if np.unique(sizes[keep]).size < 2:
        return None
    slope, _ = np.polyfit(np.log(sizes[keep]), np.log(values[keep]), 1)
    return float(slope)


def complexity_probe(inducing_grid: Sequence[int], points_grid: Sequence[int], kernel: Optional[KernelSpec] = None,
                     layer_count: int = 3, repeats: int = 3, seed: int = 0) -> ComplexityReport:
    """
    Barrido de P_t con P_i = min(inducing_grid) y de P_i con P_t = min(points_grid).

    Los exponentes ajustados se comparan con O(P_i³ + P_i² P_t) en tiempo.
    """
    kernel = kernel or KernelSpec()
    fixed_inducing = min(inducing_grid)
    fixed_points = min(points_grid)
    rows: List[TimingRow] = []

    def measure(inducing: int, points: int) -> TimingRow:
        x, y = synthetic_regression(points, seed=seed)
        spec = ModelSpec.uniform(input_dim=PROBE_INPUT_DIM, layer_count=layer_count, inducing_count=inducing,
                                 kernel=kernel, propagation=Propagation.PER_POINT)
        model = DIWPModel.initialize(spec, x, y, seed=seed)
        row = time_elbo_step(model, x, y, repeats, seed)
        logger.info(f"🔄 P_i={inducing}, P_t={points}: {row.seconds * 1e3:.1f} ms, pico {row.peak_bytes / 1e6:.1f} MB")
        return row

    points_rows = [measure(fixed_inducing, p) for p in sorted(set(points_grid))]
    inducing_rows = [measure(i, fixed_points) for i in sorted(set(inducing_grid))]
    rows.extend(points_rows)
    rows.extend(r for r in inducing_rows if (r.inducing, r.points) != (fixed_inducing, fixed_points))

    report = ComplexityReport(
        rows=rows,
        points_exponent=fit_exponent([r.points for r in points_rows], [r.seconds for r in points_rows]),
        inducing_exponent=fit_exponent([r.inducing for r in inducing_rows], [r.seconds for r in inducing_rows]),
        memory_points_exponent=fit_exponent([r.points for r in points_rows], [r.peak_bytes for r in points_rows]),
        memory_inducing_exponent=fit_exponent([r.inducing for r in inducing_rows],
                                              [r.peak_bytes for r in inducing_rows]),
    )
    logger.info(f"✅ Exponentes: P_t={report.points_exponent}, P_i={report.inducing_exponent}")
    return report
