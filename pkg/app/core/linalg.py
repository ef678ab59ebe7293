# app/core/linalg.py
"""Álgebra lineal densa diferenciable: Cholesky con jitter, solves triangulares y log|A|"""
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.linalg

from app.core.autodiff import Node, diag_part, log, scale, square, sum as node_sum, transpose
from app.core.config import settings
from app.core.errors import DecompositionError, ShapeError, SingularTriangleError

logger = logging.getLogger(__name__)


def _phi(x: np.ndarray) -> np.ndarray:
    """Triángulo inferior con la diagonal a la mitad"""
    out = np.tril(x)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky_with_jitter(a: Node, jitter_levels: Optional[Sequence[float]] = None) -> Tuple[Node, float]:
    """
    Factor de Cholesky inferior de a + jitter·I.

    El jitter se escala por mean(diag(a)) y se escala en la secuencia
    configurada (primero sin jitter). Devuelve (L, jitter_aplicado).
    """
    if a.rows != a.cols:
        raise ShapeError(f"cholesky: matriz no cuadrada {a.shape}")
    av = a.value
    if not np.all(np.isfinite(av)):
        raise DecompositionError("cholesky: entradas no finitas", attempted_jitter=[])

    levels = list(settings.jitter_levels if jitter_levels is None else jitter_levels)
    base = float(np.mean(np.abs(np.diag(av)))) or 1.0
    eye = np.eye(a.rows)
    attempted = []
    factor = None
    jitter = 0.0
    for level in levels:
        jitter = level * base
        attempted.append(jitter)
        try:
            factor = scipy.linalg.cholesky(av + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(factor)) and np.all(np.diag(factor) > 0):
            break
        factor = None
    if factor is None:
        raise DecompositionError(f"cholesky falló tras {len(attempted)} intentos (n={a.rows})",
                                 attempted_jitter=attempted)
    if jitter > 0:
        logger.debug(f"⚠️ Cholesky con jitter {jitter:.3e} (n={a.rows})")

    L = factor

    def backward(g: np.ndarray) -> np.ndarray:
        p = _phi(L.T @ np.tril(g))
        x = scipy.linalg.solve_triangular(L, p, lower=True, trans="T", check_finite=False)
        s = scipy.linalg.solve_triangular(L, x.T, lower=True, trans="T", check_finite=False).T
        return 0.5 * (s + s.T)

    return a.tape.record(L, [(a, backward)]), jitter


def cholesky(a: Node) -> Node:
    return cholesky_with_jitter(a)[0]


def triangular_solve(l: Node, b: Node, transpose_l: bool = False, side: str = "left") -> Node:
    """
    Resolver con L triangular inferior.

    side="left":  L X = B  (o Lᵀ X = B si transpose_l)
    side="right": X L = B  (o X Lᵀ = B si transpose_l)
    """
    if side == "right":
        return transpose(triangular_solve(l, transpose(b), transpose_l=not transpose_l))
    if side != "left":
        raise ValueError(f"side inválido: {side}")
    if l.rows != l.cols or l.cols != b.rows:
        raise ShapeError(f"triangular_solve: shapes {l.shape} y {b.shape}")
    lv = l.value
    if np.any(np.diag(lv) == 0):
        raise SingularTriangleError("triangular_solve: elemento diagonal nulo")
    trans = "T" if transpose_l else "N"
    x = scipy.linalg.solve_triangular(lv, b.value, lower=True, trans=trans, check_finite=False)

    def grad_b(g: np.ndarray) -> np.ndarray:
        back = "N" if transpose_l else "T"
        return scipy.linalg.solve_triangular(lv, g, lower=True, trans=back, check_finite=False)

    def grad_l(g: np.ndarray) -> np.ndarray:
        gb = grad_b(g)
        return -np.tril(x @ gb.T) if transpose_l else -np.tril(gb @ x.T)

    return l.tape.record(x, [(b, grad_b), (l, grad_l)])


def cho_solve(l: Node, b: Node) -> Node:
    """A⁻¹ B dado L = chol(A), solo con solves triangulares"""
    return triangular_solve(l, triangular_solve(l, b), transpose_l=True)


def logdet_from_cholesky(l: Node) -> Node:
    return scale(node_sum(log(diag_part(l))), 2.0)


def logdet_psd(a: Node) -> Node:
    """log|A| vía la diagonal de Cholesky"""
    return logdet_from_cholesky(cholesky(a))


def frobenius_sq(a: Node) -> Node:
    return node_sum(square(a))
