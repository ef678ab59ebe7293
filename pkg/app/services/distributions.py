# app/services/distributions.py
"""
Muestreadores y log-densidades de Wishart, Wishart inversa, normal matricial,
normal multivariante, Gamma y Gamma inversa.

Los muestreadores que entran en el ELBO son reparametrizados: el valor es una
función determinista de los parámetros y de ruido tomado del Tape, de modo que
el gradiente fluye por la muestra.
"""
from dataclasses import dataclass
from typing import Optional
import logging
import math

import numpy as np
from scipy import special as sp

from app.core.autodiff import (
    Node, Tape, _unbroadcast, add, diag_embed, hadamard, log, matmul, reciprocal,
    scale, sqrt, sub, sum as node_sum, symmetrize, transpose,
)
from app.core.errors import DomainError, ShapeError, UnsupportedDofError
from app.core.linalg import cholesky, frobenius_sq, logdet_from_cholesky, triangular_solve
from app.core.special import gamma_cdf_dshape, gamma_log_density, lgamma, mvlgamma

logger = logging.getLogger(__name__)

LOG_2 = math.log(2.0)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class WishartParams:
    scale: Node  # V
    dof: Node    # N (1x1)


@dataclass
class InvWishartParams:
    scale: Node  # Ψ
    dof: Node    # ν (1x1)


@dataclass
class MatrixNormalParams:
    mean: Node
    row_cov: Node
    col_cov: Node


def _check_square(a: Node, name: str) -> int:
    if a.rows != a.cols:
        raise ShapeError(f"{name}: la escala debe ser cuadrada, shape={a.shape}")
    return a.rows


def _check_dof(dof: Node, p: int, name: str) -> None:
    if dof.shape != (1, 1):
        raise ShapeError(f"{name}: dof debe ser escalar, shape={dof.shape}")
    if dof.item() <= p - 1:
        raise UnsupportedDofError(f"{name}: dof={dof.item():.6g} <= P-1={p - 1} (Wishart singular no soportada)")


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------

def gamma_sample_reparam(shape: Node, rate: Node, tape: Optional[Tape] = None) -> Node:
    """
    Muestra Gamma(shape, rate) por CDF inversa con ruido uniforme del Tape.

    Gradiente implícito: dz/da = -(∂F/∂a)/pdf(z) / rate, dz/drate = -z/rate.
    Admite shape/rate vectoriales con broadcasting.
    """
    tape = tape or shape.tape
    shape, rate = tape.lift(shape), tape.lift(rate)
    a, b = shape.value, rate.value
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError(f"gamma_sample_reparam: parámetros no positivos (shape={a.min():.3g}, rate={b.min():.3g})")

    out_shape = np.broadcast_shapes(a.shape, b.shape)
    u = tape.rng().uniform(size=out_shape)
    a_full = np.broadcast_to(a, out_shape)
    x = np.maximum(sp.gammaincinv(a_full, u), np.finfo(float).tiny)
    z = x / b
    dx_da = -gamma_cdf_dshape(a_full, x) * np.exp(-gamma_log_density(x, a_full))

    return tape.record(z, [
        (shape, lambda g: _unbroadcast(g * dx_da / b, a.shape)),
        (rate, lambda g: _unbroadcast(-g * z / b, b.shape)),
    ])


def invgamma_sample(alpha: Node, beta: Node, tape: Optional[Tape] = None) -> Node:
    """InvGamma(α, β) como 1/Gamma(α, rate=β)"""
    return reciprocal(gamma_sample_reparam(alpha, beta, tape))


def gamma_logpdf(x: Node, shape: Node, rate: Node) -> Node:
    """Suma de log Gamma(x; shape, rate) sobre las entradas"""
    tape = x.tape
    shape, rate = tape.lift(shape), tape.lift(rate)
    terms = add(sub(hadamard(shape, log(rate)), lgamma(shape)),
                sub(hadamard(sub(shape, 1.0), log(x)), hadamard(rate, x)))
    return node_sum(terms)


def invgamma_logpdf(x: Node, alpha: Node, beta: Node) -> Node:
    """Suma de log InvGamma(x; α, β) sobre las entradas"""
    tape = x.tape
    alpha, beta = tape.lift(alpha), tape.lift(beta)
    terms = sub(sub(hadamard(alpha, log(beta)), lgamma(alpha)),
                add(hadamard(add(alpha, 1.0), log(x)), hadamard(beta, reciprocal(x))))
    return node_sum(terms)


# ---------------------------------------------------------------------------
# Wishart / Wishart inversa
# ---------------------------------------------------------------------------

def bartlett_factor(dof: Node, p: int, tape: Tape) -> Node:
    """A triangular inferior con A_jj² ~ χ²(dof-j+1) y subdiagonal N(0, 1)"""
    offsets = tape.constant(np.arange(p, dtype=np.float64).reshape(-1, 1))
    shapes = scale(sub(dof, offsets), 0.5)
    chi2 = gamma_sample_reparam(shapes, tape.constant(0.5), tape)
    lower = np.tril(tape.rng().standard_normal((p, p)), -1)
    return add(diag_embed(sqrt(chi2)), tape.constant(lower))


def wishart_sample(params: WishartParams, tape: Optional[Tape] = None) -> Node:
    """S = (L A)(L A)ᵀ con L = chol(V) (construcción de Bartlett, dof real)"""
    tape = tape or params.scale.tape
    p = _check_square(params.scale, "wishart_sample")
    _check_dof(params.dof, p, "wishart_sample")
    la = matmul(cholesky(params.scale), bartlett_factor(params.dof, p, tape))
    return symmetrize(matmul(la, transpose(la)))


def invwishart_sample(params: InvWishartParams, tape: Optional[Tape] = None) -> Node:
    """
    G = S⁻¹ con S ~ W(Ψ⁻¹, ν), sin inversas explícitas.

    Con Ψ = C Cᵀ y S = C⁻ᵀ A Aᵀ C⁻¹ se tiene G = Bᵀ B, B = A⁻¹ Cᵀ.
    """
    tape = tape or params.scale.tape
    p = _check_square(params.scale, "invwishart_sample")
    _check_dof(params.dof, p, "invwishart_sample")
    c = cholesky(params.scale)
    a = bartlett_factor(params.dof, p, tape)
    b = triangular_solve(a, transpose(c))
    return symmetrize(matmul(transpose(b), b))


def wishart_logpdf(s: Node, params: WishartParams) -> Node:
    """((N-P-1)/2)log|S| - tr(V⁻¹S)/2 - (NP/2)log 2 - (N/2)log|V| - log Γ_P(N/2)"""
    p = _check_square(params.scale, "wishart_logpdf")
    _check_dof(params.dof, p, "wishart_logpdf")
    nu = params.dof
    ls, lv = cholesky(s), cholesky(params.scale)
    trace_term = frobenius_sq(triangular_solve(lv, ls))
    out = hadamard(scale(sub(nu, p + 1.0), 0.5), logdet_from_cholesky(ls))
    out = sub(out, scale(trace_term, 0.5))
    out = sub(out, scale(nu, 0.5 * p * LOG_2))
    out = sub(out, hadamard(scale(nu, 0.5), logdet_from_cholesky(lv)))
    return sub(out, mvlgamma(scale(nu, 0.5), p))


def invwishart_logpdf(g: Node, params: InvWishartParams) -> Node:
    """(ν/2)log|Ψ| - ((ν+P+1)/2)log|G| - tr(ΨG⁻¹)/2 - (νP/2)log 2 - log Γ_P(ν/2)"""
    p = _check_square(params.scale, "invwishart_logpdf")
    _check_dof(params.dof, p, "invwishart_logpdf")
    nu = params.dof
    lg, c = cholesky(g), cholesky(params.scale)
    trace_term = frobenius_sq(triangular_solve(lg, c))
    out = hadamard(scale(nu, 0.5), logdet_from_cholesky(c))
    out = sub(out, hadamard(scale(add(nu, p + 1.0), 0.5), logdet_from_cholesky(lg)))
    out = sub(out, scale(trace_term, 0.5))
    out = sub(out, scale(nu, 0.5 * p * LOG_2))
    return sub(out, mvlgamma(scale(nu, 0.5), p))


# ---------------------------------------------------------------------------
# Normales
# ---------------------------------------------------------------------------

def matrix_normal_from_factors(mean: Node, row_factor: Node, col_factor: Node,
                               tape: Optional[Tape] = None) -> Node:
    """mean + A Z Bᵀ, con A Aᵀ la covarianza de filas y B Bᵀ la de columnas"""
    tape = tape or mean.tape
    if row_factor.rows != mean.rows or col_factor.rows != mean.cols:
        raise ShapeError(f"matrix_normal: factores {row_factor.shape}/{col_factor.shape} para media {mean.shape}")
    z = tape.constant(tape.rng().standard_normal((row_factor.cols, col_factor.cols)))
    return add(mean, matmul(matmul(row_factor, z), transpose(col_factor)))


def matrix_normal_sample(params: MatrixNormalParams, tape: Optional[Tape] = None) -> Node:
    return matrix_normal_from_factors(params.mean, cholesky(params.row_cov), cholesky(params.col_cov), tape)


def mvn_logpdf(x: Node, mean: Optional[Node], cov: Node) -> Node:
    """Suma sobre columnas de log N(x_k; mean, cov); mean=None significa cero"""
    if cov.rows != cov.cols or cov.rows != x.rows:
        raise ShapeError(f"mvn_logpdf: x {x.shape} con covarianza {cov.shape}")
    centered = x if mean is None else sub(x, mean)
    l = cholesky(cov)
    n_cols, dim = x.cols, x.rows
    quad = frobenius_sq(triangular_solve(l, centered))
    out = add(scale(quad, -0.5), scale(logdet_from_cholesky(l), -0.5 * n_cols))
    return add(out, -0.5 * n_cols * dim * LOG_2PI)


# ---------------------------------------------------------------------------
# Muestreo sin gradiente (priors profundos e histogramas de autovalores)
# ---------------------------------------------------------------------------

def psd_factor(k: np.ndarray) -> np.ndarray:
    """Factor F con F Fᵀ = k para k PSD (autovalores negativos de redondeo a cero)"""
    k = 0.5 * (k + k.T)
    eigvals, eigvecs = np.linalg.eigh(k)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def wishart_sample_features(k: np.ndarray, width: int, rng: np.random.Generator) -> np.ndarray:
    """G = F Fᵀ / N con columnas de F ~ N(0, k); media k, singular si N < P"""
    if width < 1:
        raise DomainError(f"wishart_sample_features: anchura {width} no positiva")
    features = psd_factor(k) @ rng.standard_normal((k.shape[0], width))
    g = features @ features.T / width
    return 0.5 * (g + g.T)


def resw_sample(p: int, width: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """W Wᵀ con W = (ξ/√N + α·I_{P×N}) / √(1+α²)"""
    if alpha < 0:
        raise DomainError(f"resw_sample: alpha={alpha} negativo")
    w = (rng.standard_normal((p, width)) / math.sqrt(width) + alpha * np.eye(p, width)) / math.sqrt(1.0 + alpha ** 2)
    g = w @ w.T
    return 0.5 * (g + g.T)
