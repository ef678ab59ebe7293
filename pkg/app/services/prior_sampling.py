# app/services/prior_sampling.py
"""
Muestras del prior profundo (Wishart inverso o Wishart) y del posterior
aproximado de un modelo entrenado sobre una rejilla 1D, e histogramas de
autovalores de Wishart, Wishart inversa y ResW.
"""
from dataclasses import dataclass, field
from typing import List, Optional
import logging

import numpy as np

from app.core.autodiff import Tape, derive_seed
from app.core.errors import DomainError
from app.core.linalg import cholesky, triangular_solve
from app.models.specs import KernelSpec, Propagation
from app.services.diwp_model import BoundModel, DIWPModel, q_output_sample_logpdf
from app.services.distributions import (
    InvWishartParams, invwishart_sample, psd_factor, resw_sample, wishart_sample_features,
)
from app.services.inference import PartitionedGram, kernel_blocks, propagate
from app.services.kernels import apply_kernel_array

logger = logging.getLogger(__name__)

PRIOR_FAMILIES = ("invwishart", "wishart")
EIGEN_DISTRIBUTIONS = ("wishart", "invwishart", "resw")


@dataclass
class PriorRollout:
    """Una muestra del prior: G_ℓ y K(G_ℓ) por capa y funciones F ~ N(0, K(G_L))"""
    inputs: np.ndarray
    grams: List[np.ndarray]
    kernels: List[np.ndarray]
    functions: np.ndarray
    label: str = ""

    @property
    def layer_count(self) -> int:
        return len(self.grams)


@dataclass
class EigenHistogram:
    distribution: str
    size: int
    eigenvalues: np.ndarray  # draws × P, cada fila ordenada
    parameters: dict = field(default_factory=dict)

    def fraction_below(self, threshold: float) -> float:
        return float(np.mean(self.eigenvalues < threshold))

    def histogram(self, bins: int = 50):
        counts, edges = np.histogram(self.eigenvalues.ravel(), bins=bins)
        return counts, edges


def grid_inputs(points: int, low: float, high: float) -> np.ndarray:
    """Entradas 1D equiespaciadas como columna P×1"""
    if high <= low:
        raise DomainError(f"Rejilla vacía: [{low}, {high}]")
    return np.linspace(low, high, points).reshape(-1, 1)


def _invwishart_draw(scale: np.ndarray, dof: float, tape: Tape) -> np.ndarray:
    params = InvWishartParams(scale=tape.constant(scale), dof=tape.constant([[dof]]))
    return np.array(invwishart_sample(params, tape).value)


def _function_draws(k: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    return psd_factor(k) @ rng.standard_normal((k.shape[0], count))


def sample_input_gram(x: np.ndarray, family: str, delta: float, width: Optional[int],
                      tape: Tape) -> np.ndarray:
    """
    Primera matriz de Gram G_1.

    invwishart: G_1 = X Ω Xᵀ / N_0 con Ω ~ W⁻¹(δ I, δ + N_0 + 1).
    wishart:    G_1 = F Fᵀ / N con filas de F ~ N(0, X Xᵀ / N_0).
    """
    n0 = x.shape[1]
    if family == "invwishart":
        omega = _invwishart_draw(delta * np.eye(n0), delta + n0 + 1.0, tape)
        g = x @ omega @ x.T / n0
        return 0.5 * (g + g.T)
    k0 = x @ x.T / n0
    return wishart_sample_features(k0, width or x.shape[0], tape.rng())


def sample_hidden_gram(k_prev: np.ndarray, family: str, delta: float, width: Optional[int],
                       tape: Tape) -> np.ndarray:
    """G_ℓ | G_{ℓ-1} con media K(G_{ℓ-1})"""
    p = k_prev.shape[0]
    if family == "invwishart":
        return _invwishart_draw(delta * k_prev, delta + p + 1.0, tape)
    return wishart_sample_features(k_prev, width or p, tape.rng())


def sample_prior_rollout(x: np.ndarray, kernel: KernelSpec, layer_count: int, family: str = "invwishart",
                         delta: float = 1.0, width: Optional[int] = None, n_functions: int = 5,
                         seed: int = 0, shared_grams: Optional[List[np.ndarray]] = None,
                         label: str = "") -> PriorRollout:
    """
    Recorre el prior capa a capa; las capas de shared_grams se reutilizan y
    solo se muestrean las restantes.
    """
    if family not in PRIOR_FAMILIES:
        raise DomainError(f"Familia de prior desconocida: {family} (válidas: {', '.join(PRIOR_FAMILIES)})")
    if layer_count < 1:
        raise DomainError(f"layer_count={layer_count} debe ser >= 1")
    if delta <= 0:
        raise DomainError(f"delta={delta} debe ser positivo")

    tape = Tape(seed)
    grams: List[np.ndarray] = list(shared_grams or [])[:layer_count]
    kernels = [apply_kernel_array(kernel, g) for g in grams]
    while len(grams) < layer_count:
        if not grams:
            g = sample_input_gram(x, family, delta, width, tape)
        else:
            g = sample_hidden_gram(kernels[-1], family, delta, width, tape)
        grams.append(g)
        kernels.append(apply_kernel_array(kernel, g))

    functions = _function_draws(kernels[-1], n_functions, tape.rng())
    return PriorRollout(inputs=x, grams=grams, kernels=kernels, functions=functions, label=label)


def nngp_rollout(x: np.ndarray, kernel: KernelSpec, layer_count: int, n_functions: int = 5,
                 seed: int = 0) -> PriorRollout:
    """Límite δ→∞: G_1 = X Xᵀ / N_0 y G_ℓ = K(G_{ℓ-1})"""
    g = x @ x.T / x.shape[1]
    grams, kernels = [g], [apply_kernel_array(kernel, g)]
    for _ in range(1, layer_count):
        grams.append(kernels[-1])
        kernels.append(apply_kernel_array(kernel, grams[-1]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    functions = _function_draws(kernels[-1], n_functions, rng)
    return PriorRollout(inputs=x, grams=grams, kernels=kernels, functions=functions, label="gp")


def prior_panels(x: np.ndarray, kernel: KernelSpec, layer_count: int, panels: int, functions_per_panel: int,
                 family: str = "invwishart", delta: float = 1.0, width: Optional[int] = None,
                 seed: int = 0) -> List[PriorRollout]:
    """
    Panel GP de referencia seguido de `panels` muestras de G_L.

    Con más de una capa, todos los paneles comparten las capas inferiores y
    solo cambia la muestra de la capa superior.
    """
    rollouts = [nngp_rollout(x, kernel, layer_count, functions_per_panel, seed)]
    shared = None
    if layer_count > 1:
        base = sample_prior_rollout(x, kernel, layer_count - 1, family, delta, width, 0,
                                    seed=derive_seed(seed, 0))
        shared = base.grams
    for panel in range(1, panels + 1):
        rollouts.append(sample_prior_rollout(
            x, kernel, layer_count, family, delta, width, functions_per_panel,
            seed=derive_seed(seed, panel), shared_grams=shared, label=f"panel{panel}",
        ))
    logger.info(f"✅ Prior {family}: {panels} paneles, L={layer_count}, P={x.shape[0]}")
    return rollouts


# ---------------------------------------------------------------------------
# muestras del posterior aproximado
# ---------------------------------------------------------------------------

def _posterior_functions(bound: BoundModel, k_top: PartitionedGram, count: int, tape: Tape) -> np.ndarray:
    """F_t ~ Q(F_t | G_L, F_i) conjunto sobre la rejilla, con F_i ~ Q(F_i) nuevo por función"""
    l_k = cholesky(k_top.g_ii)
    a = triangular_solve(l_k, k_top.g_it).value
    factor = psd_factor(k_top.g_tt.value - a.T @ a)
    draws = []
    for _ in range(count):
        f_i, _, _ = q_output_sample_logpdf(bound.output, k_top.g_ii, tape)
        mean = a.T @ triangular_solve(l_k, f_i).value
        draws.append(mean + factor @ tape.rng().standard_normal(mean.shape))
    # columnas agrupadas por función: f0 salida 0, f0 salida 1, ...
    return np.hstack(draws)


def posterior_panels(model: DIWPModel, x: np.ndarray, panels: int, functions_per_panel: int,
                     seed: int = 0) -> List[PriorRollout]:
    """
    Muestras del posterior aproximado sobre una rejilla (entradas ya estandarizadas).

    Cada panel es una muestra conjunta (modo joint) de todas las G_ℓ sobre la
    rejilla dado el bloque inducido de Q, y `functions_per_panel` funciones
    de la capa de salida condicionadas a esa muestra.
    """
    spec = model.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DomainError(f"La rejilla tiene shape {x.shape}, el modelo espera {spec.input_dim} características")
    if panels < 1 or functions_per_panel < 1:
        raise DomainError("panels y functions_per_panel deben ser >= 1")

    rollouts: List[PriorRollout] = []
    for panel in range(1, panels + 1):
        tape = Tape(derive_seed(seed, panel))
        bound = model.bind_constants(tape)
        fp = propagate(bound, tape.constant(x), tape, Propagation.JOINT, sample_f_t=False)
        grams = [np.array(g.g_tt.value) for g in fp.grams]
        kernels = [apply_kernel_array(k, g) for k, g in zip(spec.kernels, grams)]
        k_top = kernel_blocks(spec.kernels[-1], fp.grams[-1])
        functions = _posterior_functions(bound, k_top, functions_per_panel, tape)
        rollouts.append(PriorRollout(inputs=x, grams=grams, kernels=kernels, functions=functions,
                                     label=f"posterior{panel}"))
    logger.info(f"✅ Posterior: {panels} paneles, L={spec.layer_count}, P={x.shape[0]}")
    return rollouts


# ---------------------------------------------------------------------------
# histogramas de autovalores
# ---------------------------------------------------------------------------

def default_invwishart_dof(size: int) -> float:
    """ν = 2P + 1, es decir δ = P"""
    return 2.0 * size + 1.0


def eigen_histogram(distribution: str, size: int, draws: int, n: Optional[int] = None,
                    nu: Optional[float] = None, alpha: float = 1.0, seed: int = 0) -> EigenHistogram:
    """
    Autovalores de muestras con media identidad.

    wishart:    W(I/N, N), N = n o P.
    invwishart: W⁻¹((ν-P-1) I, ν), ν = nu o 2P+1.
    resw:       W Wᵀ con W = (ξ/√N + α I)/√(1+α²).
    """
    if distribution not in EIGEN_DISTRIBUTIONS:
        raise DomainError(f"Distribución desconocida: {distribution} (válidas: {', '.join(EIGEN_DISTRIBUTIONS)})")
    width = n or size
    dof = nu if nu is not None else default_invwishart_dof(size)
    if distribution == "invwishart" and dof <= size + 1:
        raise DomainError(f"invwishart: ν={dof} debe superar P+1={size + 1} para tener media finita")

    eye = np.eye(size)
    out = np.empty((draws, size))
    for d in range(draws):
        tape = Tape(derive_seed(seed, d))
        if distribution == "wishart":
            sample = wishart_sample_features(eye, width, tape.rng())
        elif distribution == "invwishart":
            sample = _invwishart_draw((dof - size - 1.0) * eye, dof, tape)
        else:
            sample = resw_sample(size, width, alpha, tape.rng())
        out[d] = np.linalg.eigvalsh(sample)

    parameters = {
        "wishart": {"n": width},
        "invwishart": {"nu": dof},
        "resw": {"n": width, "alpha": alpha},
    }[distribution]
    logger.info(f"✅ Autovalores {distribution}: {draws} muestras de tamaño {size}")
    return EigenHistogram(distribution=distribution, size=size, eigenvalues=out, parameters=parameters)
