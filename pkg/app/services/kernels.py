# app/services/kernels.py
"""Kernels K(G) expresados solo en términos de la matriz de Gram"""
from dataclasses import dataclass
from typing import Optional
import logging
import math

import numpy as np

from app.core.autodiff import (
    Node, Tape, add, diag_part, divide, exp, maximum_const, scale, square, sub, transpose,
)
from app.core.errors import DomainError, NumericError, ShapeError
from app.models.responses import KernelConsistencyReport
from app.models.specs import KernelFamily, KernelSpec, ReluScale

logger = logging.getLogger(__name__)

# arccos se evalúa dentro de [-1+ε, 1-ε]
ARCCOS_CLAMP = 1e-12


@dataclass(frozen=True)
class GramMatrix:
    """Matriz de Gram simétrica con diagonal no negativa"""
    matrix: np.ndarray
    jitter_applied: float = 0.0

    @classmethod
    def validated(cls, matrix: np.ndarray, jitter_applied: float = 0.0, tol: float = 1e-12) -> "GramMatrix":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"GramMatrix: se esperaba una matriz cuadrada, shape={m.shape}")
        if not np.all(np.isfinite(m)):
            raise DomainError("GramMatrix: entradas no finitas")
        scale_ = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.T), initial=0.0) > tol * scale_:
            raise DomainError("GramMatrix: matriz no simétrica")
        if np.any(np.diag(m) < -tol * scale_):
            raise DomainError("GramMatrix: diagonal negativa")
        return cls(matrix=m, jitter_applied=jitter_applied)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def squared_distances(g: Node) -> Node:
    """R_ij = G_ii - 2 G_ij + G_jj, recortado en 0"""
    d = diag_part(g)
    return _distances(d, d, g)


def _distances(diag_a: Node, diag_b: Node, cross: Node) -> Node:
    r = sub(add(diag_a, transpose(diag_b)), scale(cross, 2.0))
    return maximum_const(r, 0.0)


def _arccos_relu(diag_a: Node, diag_b: Node, cross: Node, factor: float) -> Node:
    """
    factor·√(a_i b_j)·J(c)/(2π) con c = C_ij/√(a_i b_j), J(c) = √(1-c²) + (π - arccos c)c.

    Filas/columnas con diagonal nula producen cero.
    """
    da, db, cv = diag_a.value[:, 0], diag_b.value[:, 0], cross.value
    if np.any(da < 0) or np.any(db < 0):
        raise DomainError("arccos_relu: diagonal negativa en la matriz de Gram")
    norm = np.sqrt(da)[:, None] * np.sqrt(db)[None, :]
    valid = norm > 0
    safe_norm = np.where(valid, norm, 1.0)
    raw = np.where(valid, cv / safe_norm, 0.0)
    c = np.clip(raw, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    inside = valid & (c == raw)
    theta_term = math.pi - np.arccos(c)
    j = np.sqrt(1.0 - c * c) + theta_term * c
    coef = factor / (2.0 * math.pi)
    out = np.where(valid, coef * norm * j, 0.0)
    if not np.all(np.isfinite(out)):
        raise NumericError("arccos_relu produjo valores no finitos", layer="kernel")

    dj = np.where(inside, theta_term, 0.0)
    dk_dnorm = np.where(valid, coef * (j - c * dj), 0.0)
    safe_da = np.where(da > 0, da, 1.0)
    safe_db = np.where(db > 0, db, 1.0)

    def grad_cross(g: np.ndarray) -> np.ndarray:
        return g * coef * dj

    def grad_da(g: np.ndarray) -> np.ndarray:
        return ((g * dk_dnorm * norm).sum(axis=1) / (2.0 * safe_da) * (da > 0)).reshape(-1, 1)

    def grad_db(g: np.ndarray) -> np.ndarray:
        return ((g * dk_dnorm * norm).sum(axis=0) / (2.0 * safe_db) * (db > 0)).reshape(-1, 1)

    return cross.tape.record(out, [(cross, grad_cross), (diag_a, grad_da), (diag_b, grad_db)])


def _relu_factor(spec: KernelSpec) -> float:
    return 2.0 if spec.relu_scale == ReluScale.DOUBLED else 1.0


def kernel_cross(spec: KernelSpec, diag_a: Node, diag_b: Node, cross: Node,
                 bandwidth: Optional[Node] = None) -> Node:
    """
    Bloque K_ab a partir de diag(G_aa), diag(G_bb) y G_ab.

    Permite aplicar el kernel a bloques particionados sin formar G completa.
    """
    if diag_a.shape != (cross.rows, 1) or diag_b.shape != (cross.cols, 1):
        raise ShapeError(f"kernel_cross: diagonales {diag_a.shape}/{diag_b.shape} para bloque {cross.shape}")
    if spec.family == KernelFamily.LINEAR:
        return cross
    if spec.family == KernelFamily.SQUARED_EXPONENTIAL:
        r = _distances(diag_a, diag_b, cross)
        if bandwidth is None:
            return exp(scale(r, -0.5 / spec.bandwidth ** 2))
        return exp(scale(divide(r, square(bandwidth)), -0.5))
    if spec.family == KernelFamily.ARCCOS_RELU:
        return _arccos_relu(diag_a, diag_b, cross, _relu_factor(spec))
    raise DomainError(f"Familia de kernel desconocida: {spec.family}")


def kernel_diag(spec: KernelSpec, diag: Node) -> Node:
    """diag(K(G)) a partir de diag(G)"""
    if spec.family == KernelFamily.LINEAR:
        return diag
    if spec.family == KernelFamily.SQUARED_EXPONENTIAL:
        return diag.tape.constant(np.ones(diag.shape))
    if spec.family == KernelFamily.ARCCOS_RELU:
        return scale(diag, 0.5 * _relu_factor(spec))
    raise DomainError(f"Familia de kernel desconocida: {spec.family}")


def apply_kernel(spec: KernelSpec, g: Node, bandwidth: Optional[Node] = None) -> Node:
    d = diag_part(g)
    return kernel_cross(spec, d, d, g, bandwidth)


def apply_kernel_array(spec: KernelSpec, g: np.ndarray) -> np.ndarray:
    """apply_kernel sobre un array, sin gradiente"""
    return np.array(apply_kernel(spec, Tape().constant(g)).value)


def kernel_consistency_check(spec: KernelSpec, g: np.ndarray, seed: int = 0) -> KernelConsistencyReport:
    """
    Marginalización (borrar fila/columna antes o después del kernel) y
    equivariancia por permutación, ambas con igualdad exacta.
    """
    g = np.asarray(g, dtype=np.float64)
    full = apply_kernel_array(spec, g)
    n = g.shape[0]

    marginal_error = 0.0
    for r in range(n):
        keep = np.delete(np.arange(n), r)
        sub_first = apply_kernel_array(spec, g[np.ix_(keep, keep)])
        marginal_error = max(marginal_error, float(np.max(np.abs(sub_first - full[np.ix_(keep, keep)]), initial=0.0)))

    perm = np.random.default_rng(seed).permutation(n)
    permuted = apply_kernel_array(spec, g[np.ix_(perm, perm)])
    permutation_error = float(np.max(np.abs(permuted - full[np.ix_(perm, perm)]), initial=0.0))

    report = KernelConsistencyReport(
        family=spec.family.value,
        size=n,
        marginalization_exact=marginal_error == 0.0,
        permutation_exact=permutation_error == 0.0,
        max_marginalization_error=marginal_error,
        max_permutation_error=permutation_error,
    )
    if not (report.marginalization_exact and report.permutation_exact):
        logger.warning(f"⚠️ Kernel {spec.family.value} no consistente: {report.model_dump()}")
    return report
