# app/services/inference.py
"""
Inferencia variacional doblemente estocástica sobre matrices de Gram.

Cada pasada muestrea los bloques inducidos desde Q (acumulando log P - log Q)
y los bloques de entrenamiento/test desde el prior condicional, usando
complementos de Schur. Los términos del prior condicional se cancelan en el
ELBO, así que solo aparecen los términos de los bloques inducidos.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple
import logging
import math

import numpy as np
from scipy import special as sp

from app.core.autodiff import (
    Node, Tape, add, derive_seed, diag_part, hadamard, matmul, maximum_const, scale, sqrt, square,
    sub, sum as node_sum, symmetrize, transpose,
)
from app.core.config import settings
from app.core.errors import DataError, DecompositionError, NumericError, ShapeError
from app.core.linalg import cholesky, triangular_solve
from app.models.responses import ElboReport, PredictiveSummary
from app.models.specs import KernelSpec, Likelihood, Propagation
from app.services.diwp_model import (
    BoundModel, DIWPModel, input_gram_blocks, layer_name, likelihood_logpdf, q_hidden_sample_logpdf,
    q_omega_sample_logpdf, q_output_sample_logpdf,
)
from app.services.distributions import (
    InvWishartParams, invgamma_sample, invwishart_sample, matrix_normal_from_factors,
)
from app.services.kernels import apply_kernel, kernel_cross, kernel_diag

logger = logging.getLogger(__name__)

BoundFactory = Callable[[Tape], BoundModel]


@dataclass
class PartitionedGram:
    """Bloques inducido/test; g_tt es una columna (por punto) o el bloque completo (joint)"""
    g_ii: Node
    g_it: Node
    g_tt: Node
    joint: bool = False

    def __post_init__(self):
        p_i, p_t = self.g_it.shape
        if self.g_ii.shape != (p_i, p_i):
            raise ShapeError(f"PartitionedGram: g_ii {self.g_ii.shape} con g_it {self.g_it.shape}")
        expected = (p_t, p_t) if self.joint else (p_t, 1)
        if self.g_tt.shape != expected:
            raise ShapeError(f"PartitionedGram: g_tt {self.g_tt.shape}, se esperaba {expected}")

    @property
    def tt_diag(self) -> Node:
        return diag_part(self.g_tt) if self.joint else self.g_tt

    def scaled(self, factor: Node) -> "PartitionedGram":
        return PartitionedGram(hadamard(factor, self.g_ii), hadamard(factor, self.g_it),
                               hadamard(factor, self.g_tt), self.joint)

    def assemble(self) -> np.ndarray:
        """Matriz completa (solo modo joint), sin gradiente"""
        if not self.joint:
            raise ShapeError("assemble requiere el bloque g_tt completo")
        top = np.hstack([self.g_ii.value, self.g_it.value])
        bottom = np.hstack([self.g_it.value.T, self.g_tt.value])
        return np.vstack([top, bottom])


@dataclass
class ForwardPass:
    terms: List[Tuple[str, Node]]
    grams: List[PartitionedGram]
    f_i: Node
    f_t_mean: Node
    f_t_var: Node
    f_t: Optional[Node] = None


def kernel_blocks(spec: KernelSpec, gram: PartitionedGram) -> PartitionedGram:
    """K aplicado por bloques a una partición de G"""
    d_i = diag_part(gram.g_ii)
    k_ii = kernel_cross(spec, d_i, d_i, gram.g_ii)
    k_it = kernel_cross(spec, d_i, gram.tt_diag, gram.g_it)
    k_tt = apply_kernel(spec, gram.g_tt) if gram.joint else kernel_diag(spec, gram.g_tt)
    return PartitionedGram(k_ii, k_it, k_tt, gram.joint)


def _check_schur(schur: np.ndarray, reference: np.ndarray, layer: str) -> None:
    worst = float(np.min(schur / np.maximum(np.abs(reference), 1e-300), initial=np.inf))
    if worst < -settings.SCHUR_TOLERANCE:
        raise NumericError(f"complemento de Schur negativo ({worst:.3e} relativo)", layer=layer)


def conditional_gram_sample(psi: PartitionedGram, g_ii: Node, delta: Node, mode: Propagation,
                            tape: Optional[Tape] = None, layer: str = "layer") -> PartitionedGram:
    """
    Bloques it/tt de G dado G_ii bajo el prior condicional con escala Ψ = δK.

    joint:     G_tt·i ~ W⁻¹(Ψ_tt·i, δ+P_i+P_t+1), G_ii⁻¹G_it ~ MN(Ψ_ii⁻¹Ψ_it, Ψ_ii⁻¹, G_tt·i)
    per_point: g_tt·i ~ InvGamma(½(δ+P_i+2), ½ψ_tt·i) por punto, mismo condicional gaussiano
    En ambos casos G_tt = G_tt·i + G_ti G_ii⁻¹ G_it.
    """
    tape = tape or g_ii.tape
    p_i = g_ii.rows
    try:
        l_psi = cholesky(psi.g_ii)
        w = triangular_solve(l_psi, psi.g_it)
        if mode == Propagation.JOINT:
            if not psi.joint:
                raise ShapeError("modo joint requiere Ψ_tt completo")
            psi_tti = symmetrize(sub(psi.g_tt, matmul(transpose(w), w)))
            _check_schur(np.diag(psi_tti.value), np.diag(psi.g_tt.value), layer)
            p_t = psi_tti.rows
            g_tti = invwishart_sample(InvWishartParams(scale=psi_tti, dof=add(delta, p_i + p_t + 1.0)), tape)
            shifted = matrix_normal_from_factors(w, tape.constant(np.eye(p_i)), cholesky(g_tti), tape)
            u = triangular_solve(l_psi, shifted, transpose_l=True)
            g_it = matmul(g_ii, u)
            g_tt = symmetrize(add(g_tti, matmul(transpose(g_it), u)))
            return PartitionedGram(g_ii, g_it, g_tt, joint=True)

        psi_tt = psi.tt_diag
        p_t = psi_tt.rows
        schur = sub(psi_tt, transpose(node_sum(square(w), axis=0)))
        _check_schur(schur.value, psi_tt.value, layer)
        schur = maximum_const(schur, settings.SCHUR_FLOOR * np.maximum(psi_tt.value, 1e-12))
        alpha = scale(add(delta, p_i + 2.0), 0.5)
        g_tti = invgamma_sample(alpha, scale(schur, 0.5), tape)
        noise = tape.constant(tape.rng().standard_normal((p_i, p_t)))
        u = triangular_solve(l_psi, add(w, hadamard(noise, transpose(sqrt(g_tti)))), transpose_l=True)
        g_it = matmul(g_ii, u)
        g_tt = add(g_tti, transpose(node_sum(hadamard(g_it, u), axis=0)))
        return PartitionedGram(g_ii, g_it, g_tt, joint=False)
    except DecompositionError as exc:
        raise NumericError(exc.message, layer=layer) from exc


def output_conditional(k_top: PartitionedGram, f_i: Node) -> Tuple[Node, Node]:
    """Media K_ti K_ii⁻¹ F_i y varianza k_tt - K_ti K_ii⁻¹ K_it por punto"""
    l_k = cholesky(k_top.g_ii)
    a = triangular_solve(l_k, k_top.g_it)
    mean = matmul(transpose(a), triangular_solve(l_k, f_i))
    k_tt = k_top.tt_diag
    var = sub(k_tt, transpose(node_sum(square(a), axis=0)))
    var = maximum_const(var, settings.SCHUR_FLOOR * np.maximum(k_tt.value, 1e-12))
    return mean, var


def propagate(bound: BoundModel, x_batch: Node, tape: Tape, mode: Propagation,
              sample_f_t: bool = True) -> ForwardPass:
    """Una pasada del algoritmo: Ω, capas ocultas, salida"""
    spec = bound.spec
    joint = mode == Propagation.JOINT
    terms: List[Tuple[str, Node]] = []

    try:
        if spec.nngp_limit[0]:
            omega = tape.constant(np.eye(spec.input_dim))
        else:
            omega, log_q, log_p = q_omega_sample_logpdf(bound.input, spec.input_dim, tape)
            terms.append(("omega", sub(log_p, log_q)))
        g_ii, g_it, g_tt = input_gram_blocks(bound.input, bound.inducing, x_batch, omega, full_tt=joint)
    except DecompositionError as exc:
        raise NumericError(exc.message, layer="omega") from exc
    gram = PartitionedGram(g_ii, g_it, g_tt, joint)
    grams = [gram]

    for layer in range(2, spec.layer_count + 1):
        name = layer_name(layer)
        k = kernel_blocks(spec.kernels[layer - 2], gram)
        params = bound.hidden.get(layer)
        if params is None:
            gram = k
        else:
            try:
                g_ii, log_q, log_p = q_hidden_sample_logpdf(params, k.g_ii, tape)
            except DecompositionError as exc:
                raise NumericError(exc.message, layer=name) from exc
            terms.append((name, sub(log_p, log_q)))
            gram = conditional_gram_sample(k.scaled(params.delta), g_ii, params.delta, mode, tape, layer=name)
        grams.append(gram)

    try:
        k_top = kernel_blocks(spec.kernels[spec.layer_count - 1], gram)
        f_i, log_q, log_p = q_output_sample_logpdf(bound.output, k_top.g_ii, tape)
        terms.append(("output", sub(log_p, log_q)))
        mean, var = output_conditional(k_top, f_i)
    except DecompositionError as exc:
        raise NumericError(exc.message, layer="output") from exc

    f_t = None
    if sample_f_t:
        noise = tape.constant(tape.rng().standard_normal(mean.shape))
        f_t = add(mean, hadamard(sqrt(var), noise))
    return ForwardPass(terms=terms, grams=grams, f_i=f_i, f_t_mean=mean, f_t_var=var, f_t=f_t)


def elbo_batch(model: Optional[DIWPModel], x_batch: np.ndarray, y_batch: np.ndarray, dataset_size: int,
               n_samples: int, tape: Tape, bound: Optional[BoundModel] = None) -> Tuple[Node, ElboReport]:
    """
    Estimación del ELBO de un minibatch promediada sobre n_samples pasadas.

    La verosimilitud se escala por dataset_size / batch_size. Devuelve el nodo
    escalar (para backward) y su descomposición.
    """
    x_batch = np.asarray(x_batch, dtype=np.float64)
    if x_batch.ndim != 2 or x_batch.shape[0] == 0:
        raise DataError(f"elbo_batch: batch vacío o mal formado, shape={x_batch.shape}")
    if n_samples < 1:
        raise DataError(f"elbo_batch: n_samples={n_samples}")
    bound = bound or model.bind(tape)
    spec = bound.spec
    batch_size = x_batch.shape[0]
    minibatch_scale = dataset_size / batch_size
    x_node = tape.constant(x_batch)

    total: Optional[Node] = None
    loglik_values: List[float] = []
    term_values: Dict[str, List[float]] = {}
    noise_var = bound.output.noise_var if bound.output is not None else None
    for _ in range(n_samples):
        fp = propagate(bound, x_node, tape, spec.propagation)
        loglik = likelihood_logpdf(fp.f_t, y_batch, spec.likelihood, noise_var)
        loglik_values.append(loglik.item())
        estimate = scale(loglik, minibatch_scale)
        for name, term in fp.terms:
            term_values.setdefault(name, []).append(term.item())
            estimate = add(estimate, term)
        total = estimate if total is None else add(total, estimate)

    elbo = scale(total, 1.0 / n_samples)
    report = ElboReport(
        total=elbo.item(),
        expected_loglik=float(np.mean(loglik_values)),
        layer_names=list(term_values),
        layer_terms=[float(np.mean(v)) for v in term_values.values()],
        minibatch_scale=minibatch_scale,
        sample_count=n_samples,
        batch_size=batch_size,
    )
    return elbo, report


def predict(model: DIWPModel, x_test: np.ndarray, y_test: Optional[np.ndarray] = None, n_samples: int = 100,
            seed: int = 0, bound_factory: Optional[BoundFactory] = None) -> PredictiveSummary:
    """
    Predicción por punto: cada muestra propaga los puntos de test de forma
    independiente (modo por punto) y la log-verosimilitud predictiva es la
    log-media-exp sobre las muestras.
    """
    x_test = np.asarray(x_test, dtype=np.float64)
    if x_test.ndim != 2 or x_test.shape[0] == 0:
        raise DataError(f"predict: entradas vacías o mal formadas, shape={x_test.shape}")
    spec = model.spec
    gaussian = spec.likelihood == Likelihood.GAUSSIAN
    bound_factory = bound_factory or model.bind_constants

    means, variances, probabilities, sample_ll = [], [], [], []
    for s in range(n_samples):
        tape = Tape(derive_seed(seed, s))
        bound = bound_factory(tape)
        fp = propagate(bound, tape.constant(x_test), tape, Propagation.PER_POINT, sample_f_t=False)
        mean, var = fp.f_t_mean.value, fp.f_t_var.value
        if gaussian:
            pred_var = var + bound.output.noise_var.item()
            pred_var = np.broadcast_to(pred_var, mean.shape)
            means.append(mean)
            variances.append(pred_var)
            if y_test is not None:
                y = np.asarray(y_test, dtype=np.float64).reshape(mean.shape)
                ll = -0.5 * (np.log(2.0 * math.pi * pred_var) + (y - mean) ** 2 / pred_var)
                sample_ll.append(ll.sum(axis=1))
        else:
            logits = mean + np.sqrt(var) * tape.rng().standard_normal(mean.shape)
            log_probs = sp.log_softmax(logits, axis=1)
            probabilities.append(np.exp(log_probs))
            means.append(logits)
            if y_test is not None:
                labels = np.asarray(y_test).reshape(-1).astype(int)
                sample_ll.append(log_probs[np.arange(labels.size), labels])

    loglik: List[float] = []
    if sample_ll:
        stacked = np.stack(sample_ll)
        loglik = (sp.logsumexp(stacked, axis=0) - math.log(n_samples)).tolist()

    mean_arr = np.mean(np.stack(means), axis=0)
    summary = dict(loglik=loglik, mean=mean_arr.tolist(), sample_count=n_samples)
    if gaussian:
        stacked_means = np.stack(means)
        summary["variance"] = (np.mean(np.stack(variances), axis=0) + np.var(stacked_means, axis=0)).tolist()
    else:
        probs = np.mean(np.stack(probabilities), axis=0)
        summary["probabilities"] = probs.tolist()
        if y_test is not None:
            labels = np.asarray(y_test).reshape(-1).astype(int)
            summary["accuracy"] = float(np.mean(np.argmax(probs, axis=1) == labels))
    return PredictiveSummary(**summary)
