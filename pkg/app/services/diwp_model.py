# app/services/diwp_model.py
"""
Parámetros y distribuciones del proceso de Wishart inverso profundo.

Convenciones:
- L cuenta matrices de Gram: G_1 viene de la capa de entrada Ω, las capas
  ocultas son ℓ = 2..L y la salida es F ~ N(0, K(G_L)).
- Todos los parámetros se guardan sin restricción; δ, γ, Λ, σ² y la escala de
  entrada pasan por softplus al enlazarse a un Tape.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np

from app.core.autodiff import (
    Node, Tape, add, concat_rows, divide, hadamard, log, log_softmax, matmul, scale, slice_block, softplus,
    softplus_inverse, sqrt, square, sub, sum as node_sum, symmetrize, transpose,
)
from app.core.errors import DataError, DomainError, ShapeError
from app.core.linalg import cholesky, triangular_solve
from app.models.specs import KernelSpec, Likelihood, ModelSpec
from app.services.distributions import (
    InvWishartParams, invwishart_logpdf, invwishart_sample, matrix_normal_from_factors, mvn_logpdf,
)
from app.services.kernels import apply_kernel

logger = logging.getLogger(__name__)

INIT_GAMMA = 1e-3
INIT_V_SCALE = 1e-3
INIT_OUTPUT_SCALE = 0.1
INIT_LAMBDA = 1.0
INIT_NOISE_FRACTION = 0.1
INDUCING_NOISE = 1e-3


# ---------------------------------------------------------------------------
# almacenamiento
# ---------------------------------------------------------------------------

class ParameterStore:
    """Arrays sin restricción con nombre, en orden estable"""

    def __init__(self, arrays: Optional[Dict[str, np.ndarray]] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Parámetro {name}: se esperaba una matriz 2-D, ndim={arr.ndim}")
        if name in self._arrays and self._arrays[name].shape != arr.shape:
            raise ShapeError(f"Parámetro {name}: shape {arr.shape} != {self._arrays[name].shape}")
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> List[str]:
        return list(self._arrays)

    def shapes(self) -> Dict[str, Tuple[int, int]]:
        return {name: arr.shape for name, arr in self._arrays.items()}

    @property
    def parameter_count(self) -> int:
        return int(sum(arr.size for arr in self._arrays.values()))

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self._arrays.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.as_dict())

    def bind(self, tape: Tape) -> Dict[str, Node]:
        return {name: tape.variable(name, arr) for name, arr in self._arrays.items()}

    def bind_constants(self, tape: Tape) -> Dict[str, Node]:
        return {name: tape.constant(arr, name=name) for name, arr in self._arrays.items()}


# ---------------------------------------------------------------------------
# vistas restringidas
# ---------------------------------------------------------------------------

@dataclass
class InputLayerParams:
    delta: Optional[Node]
    V: Optional[Node]
    gamma: Optional[Node]
    bias: Optional[Node] = None
    scale: Optional[Node] = None


@dataclass
class HiddenLayerParams:
    delta: Node
    V: Node
    gamma: Node


@dataclass
class OutputLayerParams:
    v: Node
    lambda_diag: Node
    noise_var: Optional[Node] = None


@dataclass
class BoundModel:
    """Parámetros restringidos de un modelo sobre un Tape concreto"""
    spec: ModelSpec
    inducing: Node
    input: Optional[InputLayerParams]
    hidden: Dict[int, Optional[HiddenLayerParams]] = field(default_factory=dict)
    output: Optional[OutputLayerParams] = None

    @property
    def tape(self) -> Tape:
        return self.inducing.tape


def layer_name(layer: int) -> str:
    return "omega" if layer == 1 else f"layer{layer}"


# ---------------------------------------------------------------------------
# modelo
# ---------------------------------------------------------------------------

class DIWPModel:
    """ModelSpec + ParameterStore"""

    def __init__(self, spec: ModelSpec, params: ParameterStore):
        self.spec = spec
        self.params = params
        self._check_params()

    @classmethod
    def initialize(cls, spec: ModelSpec, x: np.ndarray, y: np.ndarray, seed: int = 0) -> "DIWPModel":
        """Inicialización cerca del prior a partir de los datos de entrenamiento (estandarizados)"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != spec.input_dim:
            raise ShapeError(f"initialize: x {x.shape} no tiene {spec.input_dim} columnas")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
        n0, p_i, out = spec.input_dim, spec.inducing_count, spec.output_dim
        params = ParameterStore()

        if not spec.nngp_limit[0]:
            params["input.delta_raw"] = softplus_inverse(spec.delta_init or float(n0)).reshape(1, 1)
            params["input.V"] = INIT_V_SCALE * np.eye(n0)
            params["input.gamma_raw"] = softplus_inverse(INIT_GAMMA).reshape(1, 1)
        if spec.learn_input_transform:
            params["input.bias"] = np.zeros((1, n0))
            params["input.scale_raw"] = np.full((1, n0), softplus_inverse(1.0))

        for layer in range(2, spec.layer_count + 1):
            if spec.nngp_limit[layer - 1]:
                continue
            params[f"layer{layer}.delta_raw"] = softplus_inverse(spec.delta_init or float(p_i)).reshape(1, 1)
            params[f"layer{layer}.V"] = INIT_V_SCALE * np.eye(p_i)
            params[f"layer{layer}.gamma_raw"] = softplus_inverse(INIT_GAMMA).reshape(1, 1)

        params["output.v"] = INIT_OUTPUT_SCALE * rng.standard_normal((p_i, out))
        params["output.lambda_raw"] = np.full((p_i, out), softplus_inverse(INIT_LAMBDA))
        if spec.likelihood == Likelihood.GAUSSIAN:
            target_var = float(np.var(y)) if np.size(y) > 1 else 1.0
            params["output.noise_raw"] = softplus_inverse(INIT_NOISE_FRACTION * max(target_var, 1e-6)).reshape(1, 1)

        params["inducing.X"] = initial_inducing_inputs(x, p_i, rng)
        logger.info(f"✅ Modelo inicializado: L={spec.layer_count}, P_i={p_i}, {params.parameter_count} parámetros")
        return cls(spec, params)

    def _check_params(self) -> None:
        expected = self.expected_shapes()
        missing = sorted(set(expected) - set(self.params))
        extra = sorted(set(self.params.names()) - set(expected))
        if missing or extra:
            raise ShapeError(f"Parámetros inconsistentes con ModelSpec (faltan={missing}, sobran={extra})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"Parámetro {name}: shape {self.params[name].shape} != {shape}")

    def expected_shapes(self) -> Dict[str, Tuple[int, int]]:
        spec = self.spec
        n0, p_i, out = spec.input_dim, spec.inducing_count, spec.output_dim
        shapes: Dict[str, Tuple[int, int]] = {}
        if not spec.nngp_limit[0]:
            shapes.update({"input.delta_raw": (1, 1), "input.V": (n0, n0), "input.gamma_raw": (1, 1)})
        if spec.learn_input_transform:
            shapes.update({"input.bias": (1, n0), "input.scale_raw": (1, n0)})
        for layer in range(2, spec.layer_count + 1):
            if not spec.nngp_limit[layer - 1]:
                shapes.update({f"layer{layer}.delta_raw": (1, 1), f"layer{layer}.V": (p_i, p_i),
                               f"layer{layer}.gamma_raw": (1, 1)})
        shapes.update({"output.v": (p_i, out), "output.lambda_raw": (p_i, out)})
        if spec.likelihood == Likelihood.GAUSSIAN:
            shapes["output.noise_raw"] = (1, 1)
        shapes["inducing.X"] = (p_i, n0)
        return shapes

    def bind(self, tape: Tape) -> BoundModel:
        return self.bind_nodes(self.params.bind(tape))

    def bind_constants(self, tape: Tape) -> BoundModel:
        return self.bind_nodes(self.params.bind_constants(tape))

    def bind_nodes(self, nodes: Dict[str, Node]) -> BoundModel:
        """Aplicar las restricciones a nodos sin restricción ya registrados"""
        spec = self.spec
        input_params = None
        has_omega = not spec.nngp_limit[0]
        if has_omega or spec.learn_input_transform:
            input_params = InputLayerParams(
                delta=softplus(nodes["input.delta_raw"]) if has_omega else None,
                V=nodes["input.V"] if has_omega else None,
                gamma=softplus(nodes["input.gamma_raw"]) if has_omega else None,
                bias=nodes.get("input.bias"),
                scale=softplus(nodes["input.scale_raw"]) if spec.learn_input_transform else None,
            )
        hidden: Dict[int, Optional[HiddenLayerParams]] = {}
        for layer in range(2, spec.layer_count + 1):
            if spec.nngp_limit[layer - 1]:
                hidden[layer] = None
                continue
            hidden[layer] = HiddenLayerParams(
                delta=softplus(nodes[f"layer{layer}.delta_raw"]),
                V=nodes[f"layer{layer}.V"],
                gamma=softplus(nodes[f"layer{layer}.gamma_raw"]),
            )
        output = OutputLayerParams(
            v=nodes["output.v"],
            lambda_diag=softplus(nodes["output.lambda_raw"]),
            noise_var=softplus(nodes["output.noise_raw"]) if "output.noise_raw" in nodes else None,
        )
        return BoundModel(spec=spec, inducing=nodes["inducing.X"], input=input_params, hidden=hidden, output=output)


def initial_inducing_inputs(x: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Subconjunto aleatorio de filas; con reemplazo y ruido si no hay suficientes"""
    n = x.shape[0]
    if n == 0:
        raise DataError("No hay filas para inicializar los puntos inducidos")
    if count <= n:
        return x[rng.choice(n, size=count, replace=False)].copy()
    rows = x[rng.choice(n, size=count, replace=True)]
    return rows + INDUCING_NOISE * rng.standard_normal(rows.shape)


# ---------------------------------------------------------------------------
# capa de entrada
# ---------------------------------------------------------------------------

def transform_inputs(params: Optional[InputLayerParams], x: Node) -> Node:
    """(x - bias)·scale por característica"""
    if params is None:
        return x
    out = x
    if params.bias is not None:
        out = sub(out, params.bias)
    if params.scale is not None:
        out = hadamard(out, params.scale)
    return out


def input_gram(params: Optional[InputLayerParams], x_inducing: Node, x_batch: Node, omega: Node) -> Node:
    """G₁ = X Ω Xᵀ / N₀ sobre las filas [X_i; (X_t - bias)·scale]"""
    x = concat_rows([x_inducing, transform_inputs(params, x_batch)])
    if x.cols != omega.rows:
        raise ShapeError(f"input_gram: X {x.shape} con Ω {omega.shape}")
    return symmetrize(scale(matmul(matmul(x, omega), transpose(x)), 1.0 / x.cols))


def input_gram_blocks(params: Optional[InputLayerParams], x_inducing: Node, x_batch: Node, omega: Node,
                      full_tt: bool = False) -> Tuple[Node, Node, Node]:
    """
    Bloques (G_ii, G_it, G_tt) de G₁ sin formar la matriz completa.

    G_tt es la diagonal como columna salvo con full_tt=True.
    """
    n0 = x_inducing.cols
    x_t = transform_inputs(params, x_batch)
    xi_omega = matmul(x_inducing, omega)
    g_ii = symmetrize(scale(matmul(xi_omega, transpose(x_inducing)), 1.0 / n0))
    g_it = scale(matmul(xi_omega, transpose(x_t)), 1.0 / n0)
    xt_omega = matmul(x_t, omega)
    if full_tt:
        g_tt = symmetrize(scale(matmul(xt_omega, transpose(x_t)), 1.0 / n0))
    else:
        g_tt = scale(node_sum(hadamard(xt_omega, x_t), axis=1), 1.0 / n0)
    return g_ii, g_it, g_tt


def _omega_posterior(params: InputLayerParams, n0: int) -> InvWishartParams:
    tape = params.delta.tape
    eye = tape.constant(np.eye(n0))
    psi = add(hadamard(params.delta, eye), matmul(params.V, transpose(params.V)))
    return InvWishartParams(scale=psi, dof=add(add(params.delta, params.gamma), n0 + 1.0))


def _omega_prior(params: InputLayerParams, n0: int) -> InvWishartParams:
    eye = params.delta.tape.constant(np.eye(n0))
    return InvWishartParams(scale=hadamard(params.delta, eye), dof=add(params.delta, n0 + 1.0))


def prior_omega_logpdf(params: InputLayerParams, omega: Node) -> Node:
    """log P(Ω) con P(Ω) = W⁻¹(δ₁I, δ₁+N₀+1)"""
    return invwishart_logpdf(omega, _omega_prior(params, omega.rows))


def q_omega_sample_logpdf(params: InputLayerParams, n0: int, tape: Optional[Tape] = None) -> Tuple[Node, Node, Node]:
    """Ω ~ Q(Ω) = W⁻¹(δ₁I + V₁V₁ᵀ, δ₁+γ₁+N₀+1); devuelve (Ω, log Q, log P)"""
    tape = tape or params.delta.tape
    q = _omega_posterior(params, n0)
    omega = invwishart_sample(q, tape)
    return omega, invwishart_logpdf(omega, q), prior_omega_logpdf(params, omega)


# ---------------------------------------------------------------------------
# capas ocultas
# ---------------------------------------------------------------------------

def q_hidden_sample_logpdf(params: HiddenLayerParams, k_prev: Node,
                           tape: Optional[Tape] = None) -> Tuple[Node, Node, Node]:
    """
    G_ii ~ W⁻¹(δK + VVᵀ, δ+γ+P_i+1); devuelve (G_ii, log Q, log P) con
    P = W⁻¹(δK, δ+P_i+1).
    """
    tape = tape or params.delta.tape
    p_i = k_prev.rows
    if params.V.shape != (p_i, p_i):
        raise ShapeError(f"q_hidden: V {params.V.shape} para P_i={p_i}")
    psi_prior = hadamard(params.delta, k_prev)
    q = InvWishartParams(scale=add(psi_prior, matmul(params.V, transpose(params.V))),
                         dof=add(add(params.delta, params.gamma), p_i + 1.0))
    p = InvWishartParams(scale=psi_prior, dof=add(params.delta, p_i + 1.0))
    g = invwishart_sample(q, tape)
    return g, invwishart_logpdf(g, q), invwishart_logpdf(g, p)


def nngp_layer(g_prev: Node, spec: KernelSpec) -> Node:
    """Límite δ→∞: G_ℓ = K(G_{ℓ-1}) sin muestreo"""
    return apply_kernel(spec, g_prev)


# ---------------------------------------------------------------------------
# capa de salida
# ---------------------------------------------------------------------------

def output_posterior(params: OutputLayerParams, k_top: Node, column: int) -> Tuple[Node, Node]:
    """
    Media y covarianza de Q(f_λ) = N(Σ Λ v, Σ), Σ = (K⁻¹ + Λ)⁻¹.

    Con s = √λ y B = I + diag(s) K diag(s): Σ = K - Mᵀ M, M = chol(B)⁻¹ diag(s) K.
    """
    tape = k_top.tape
    p_i = k_top.rows
    lam = _column(params.lambda_diag, column)
    v = _column(params.v, column)
    s = sqrt(lam)
    sk = hadamard(s, k_top)
    b = add(tape.constant(np.eye(p_i)), hadamard(sk, transpose(s)))
    m = triangular_solve(cholesky(b), sk)
    sigma = symmetrize(sub(k_top, matmul(transpose(m), m)))
    mean = matmul(sigma, hadamard(lam, v))
    return mean, sigma


def _column(a: Node, column: int) -> Node:
    return slice_block(a, slice(None), (column, column + 1))


def q_output_sample_logpdf(params: OutputLayerParams, k_top: Node,
                           tape: Optional[Tape] = None) -> Tuple[Node, Node, Node]:
    """F_i,λ ~ N(Σ_λ Λ_λ v_λ, Σ_λ) por columna; devuelve (F_i, log Q, log P)"""
    tape = tape or k_top.tape
    if params.v.rows != k_top.rows:
        raise ShapeError(f"q_output: v {params.v.shape} para K {k_top.shape}")
    columns, log_q, log_p = [], None, None
    for c in range(params.v.cols):
        mean, sigma = output_posterior(params, k_top, c)
        eye = tape.constant(np.eye(1))
        f = matrix_normal_from_factors(mean, cholesky(sigma), eye, tape)
        lq = mvn_logpdf(f, mean, sigma)
        lp = mvn_logpdf(f, None, k_top)
        columns.append(transpose(f))
        log_q = lq if log_q is None else add(log_q, lq)
        log_p = lp if log_p is None else add(log_p, lp)
    return transpose(concat_rows(columns)), log_q, log_p


# ---------------------------------------------------------------------------
# verosimilitud
# ---------------------------------------------------------------------------

def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= classes or np.any(labels != np.round(labels))):
        raise DomainError(f"Etiquetas fuera de rango [0, {classes})")
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels.astype(int)] = 1.0
    return out


def likelihood_logpdf(f_t: Node, y: np.ndarray, likelihood: Likelihood,
                      noise_var: Optional[Node] = None) -> Node:
    """Suma de log p(y_n | f_n) sobre el batch"""
    tape = f_t.tape
    y = np.asarray(y, dtype=np.float64)
    if likelihood == Likelihood.GAUSSIAN:
        if noise_var is None:
            raise DomainError("La verosimilitud gaussiana requiere noise_var")
        y = y.reshape(f_t.rows, -1)
        if y.shape != f_t.shape:
            raise ShapeError(f"likelihood: y {y.shape} frente a f {f_t.shape}")
        resid = sub(tape.constant(y), f_t)
        quad = divide(node_sum(square(resid)), noise_var)
        count = float(y.size)
        return scale(add(quad, add(scale(log(noise_var), count), count * np.log(2.0 * np.pi))), -0.5)
    if y.size != f_t.rows:
        raise ShapeError(f"likelihood: {y.size} etiquetas para {f_t.rows} filas")
    return node_sum(hadamard(log_softmax(f_t), tape.constant(one_hot(y, f_t.cols))))
