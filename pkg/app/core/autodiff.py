# app/core/autodiff.py
"""
Núcleo de diferenciación en modo reverso sobre matrices densas.

Cada operación crea un Node con su valor y, por cada padre que requiere
gradiente, una regla backward que recibe el gradiente de la salida y
devuelve la contribución para ese padre. El Tape registra los nodos en
orden de creación, que ya es un orden topológico.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from app.core.errors import DomainError, ShapeError

logger = logging.getLogger(__name__)

Backward = Callable[[np.ndarray], np.ndarray]
Operand = Union["Node", float, int, np.ndarray]
Block = Union[slice, Tuple[int, int]]


def as_matrix(value) -> np.ndarray:
    """Normalizar a matriz 2-D float64 finita (escalar -> 1x1, vector -> columna)"""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"Se esperaba una matriz 2-D, recibido ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("La matriz contiene entradas no finitas")
    return arr


class Node:
    """Valor matricial diferenciable dentro de un Tape"""

    __slots__ = ("tape", "value", "grad", "parents", "requires_grad", "name", "index")

    def __init__(self, tape: "Tape", value: np.ndarray, parents: Sequence[Tuple["Node", Backward]] = (),
                 requires_grad: bool = False, name: Optional[str] = None):
        value.setflags(write=False)
        self.tape = tape
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self.index = -1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() requiere un escalar, shape={self.shape}")
        return float(self.value[0, 0])

    def __add__(self, other: Operand) -> "Node":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Node":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Node":
        return sub(self.tape.lift(other), self)

    def __mul__(self, other: Operand) -> "Node":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Node":
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return divide(self, other)

    def __neg__(self) -> "Node":
        return scale(self, -1.0)

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def derive_seed(*keys: int) -> int:
    """Semilla entera derivada de una tupla de enteros (p. ej. semilla y paso)"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class Tape:
    """Registro ordenado de nodos y fuente de aleatoriedad con semilla"""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.nodes: List[Node] = []
        self.variables: Dict[str, Node] = {}
        self._draws = 0

    # -- creación de nodos --------------------------------------------------
    def _register(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._register(Node(self, as_matrix(value), name=name))

    def variable(self, name: str, value) -> Node:
        """Hoja diferenciable; su gradiente se devuelve por nombre en backward()"""
        if name in self.variables:
            raise ValueError(f"Variable duplicada en el tape: {name}")
        node = self._register(Node(self, as_matrix(value), requires_grad=True, name=name))
        self.variables[name] = node
        return node

    def lift(self, value: Operand) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise ValueError("No se pueden mezclar nodos de tapes distintos")
            return value
        return self.constant(value)

    def record(self, value: np.ndarray, parents: Sequence[Tuple[Node, Backward]],
               name: Optional[str] = None) -> Node:
        """Registrar el resultado de una operación con sus reglas backward"""
        active = [(p, rule) for p, rule in parents if p.requires_grad]
        node = Node(self, np.asarray(value, dtype=np.float64), active,
                    requires_grad=bool(active), name=name)
        return self._register(node)

    # -- aleatoriedad ---------------------------------------------------------
    def rng(self) -> np.random.Generator:
        """Generador por extracción: depende solo de (seed, contador)"""
        gen = np.random.default_rng(np.random.SeedSequence([self.seed, self._draws]))
        self._draws += 1
        return gen

    @property
    def draw_count(self) -> int:
        return self._draws

    # -- backward ------------------------------------------------------------
    def backward(self, output: Node) -> Dict[str, np.ndarray]:
        """Acumular gradientes de un escalar; devuelve {nombre_variable: gradiente}"""
        if output.shape != (1, 1):
            raise ShapeError(f"backward requiere una salida escalar, shape={output.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: output.index + 1]):
            if node.grad is None or not node.parents:
                continue
            for parent, rule in node.parents:
                contribution = rule(node.grad)
                parent.grad = contribution if parent.grad is None else parent.grad + contribution
        return {
            name: (np.zeros_like(node.value) if node.grad is None else np.array(node.grad))
            for name, node in self.variables.items()
        }


# ---------------------------------------------------------------------------
# utilidades de broadcasting
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes incompatibles {a.shape} y {b.shape}")


def _pair(a: Operand, b: Operand) -> Tuple[Node, Node]:
    if isinstance(a, Node):
        return a, a.tape.lift(b)
    if isinstance(b, Node):
        return b.tape.lift(a), b
    raise TypeError("Al menos un operando debe ser Node")


# ---------------------------------------------------------------------------
# álgebra básica
# ---------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: dimensiones internas {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def add(a: Operand, b: Operand) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return a.tape.record(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a: Operand, b: Operand) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    return a.tape.record(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def scale(a: Node, c: float) -> Node:
    return a.tape.record(c * a.value, [(a, lambda g: c * g)])


def hadamard(a: Operand, b: Operand) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return a.tape.record(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, a.shape)),
        (b, lambda g: _unbroadcast(g * av, b.shape)),
    ])


def divide(a: Operand, b: Operand) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "divide")
    if np.any(b.value == 0):
        raise DomainError("divide: división por cero")
    av, bv = a.value, b.value
    out = av / bv
    return a.tape.record(out, [
        (a, lambda g: _unbroadcast(g / bv, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, b.shape)),
    ])


def transpose(a: Node) -> Node:
    return a.tape.record(a.value.T.copy(), [(a, lambda g: g.T)])


def sum(a: Node, axis: Optional[int] = None) -> Node:  # noqa: A001 - suite elementwise
    if axis is None:
        shape = a.shape
        return a.tape.record(np.array([[a.value.sum()]]), [(a, lambda g: np.full(shape, g[0, 0]))])
    out = a.value.sum(axis=axis, keepdims=True)
    return a.tape.record(out, [(a, lambda g: np.broadcast_to(g, a.shape).copy())])


def trace(a: Node) -> Node:
    if a.rows != a.cols:
        raise ShapeError(f"trace: matriz no cuadrada {a.shape}")
    n = a.rows
    return a.tape.record(np.array([[np.trace(a.value)]]), [(a, lambda g: g[0, 0] * np.eye(n))])


# ---------------------------------------------------------------------------
# funciones elementwise
# ---------------------------------------------------------------------------

def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape.record(out, [(a, lambda g: g * out)])


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise DomainError("log de entradas no positivas")
    av = a.value
    return a.tape.record(np.log(av), [(a, lambda g: g / av)])


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0):
        raise DomainError("sqrt de entradas negativas")
    out = np.sqrt(a.value)
    return a.tape.record(out, [(a, lambda g: 0.5 * g / out)])


def square(a: Node) -> Node:
    av = a.value
    return a.tape.record(av * av, [(a, lambda g: 2.0 * g * av)])


def reciprocal(a: Node) -> Node:
    if np.any(a.value == 0):
        raise DomainError("reciprocal de cero")
    out = 1.0 / a.value
    return a.tape.record(out, [(a, lambda g: -g * out * out)])


def softplus(a: Node) -> Node:
    av = a.value
    out = np.logaddexp(0.0, av)
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return a.tape.record(out, [(a, lambda g: g * sig)])


def softplus_inverse(y) -> np.ndarray:
    """Inversa de softplus en numpy (para inicializar almacenamiento sin restricción)"""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("softplus_inverse requiere valores positivos")
    return y + np.log(-np.expm1(-y))


def maximum_const(a: Node, floor: Union[float, np.ndarray]) -> Node:
    """max(a, floor) con gradiente nulo donde actúa el piso"""
    keep = a.value >= floor
    return a.tape.record(np.where(keep, a.value, floor), [(a, lambda g: g * keep)])


def symmetrize(a: Node) -> Node:
    if a.rows != a.cols:
        raise ShapeError(f"symmetrize: matriz no cuadrada {a.shape}")
    out = 0.5 * (a.value + a.value.T)
    return a.tape.record(out, [(a, lambda g: 0.5 * (g + g.T))])


def log_softmax(a: Node) -> Node:
    """log-softmax por filas"""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return a.tape.record(out, [(a, lambda g: g - soft * g.sum(axis=1, keepdims=True))])


# ---------------------------------------------------------------------------
# bloques
# ---------------------------------------------------------------------------

def _as_slice(block: Block) -> slice:
    return block if isinstance(block, slice) else slice(block[0], block[1])


def slice_block(a: Node, rows: Block, cols: Block) -> Node:
    rs, cs = _as_slice(rows), _as_slice(cols)
    shape = a.shape

    def scatter(g: np.ndarray) -> np.ndarray:
        full = np.zeros(shape)
        full[rs, cs] = g
        return full

    return a.tape.record(a.value[rs, cs].copy(), [(a, scatter)])


def concat_rows(parts: Sequence[Node]) -> Node:
    if len({p.cols for p in parts}) != 1:
        raise ShapeError("concat_rows: número de columnas distinto")
    offsets = np.cumsum([0] + [p.rows for p in parts])
    parents = [(p, (lambda g, s=s, e=e: g[s:e])) for p, s, e in zip(parts, offsets[:-1], offsets[1:])]
    return parts[0].tape.record(np.vstack([p.value for p in parts]), parents)


def concat_cols(parts: Sequence[Node]) -> Node:
    if len({p.rows for p in parts}) != 1:
        raise ShapeError("concat_cols: número de filas distinto")
    offsets = np.cumsum([0] + [p.cols for p in parts])
    parents = [(p, (lambda g, s=s, e=e: g[:, s:e])) for p, s, e in zip(parts, offsets[:-1], offsets[1:])]
    return parts[0].tape.record(np.hstack([p.value for p in parts]), parents)


def block(grid: Sequence[Sequence[Node]]) -> Node:
    """Ensamblar una matriz por bloques [[A, B], [C, D]]"""
    return concat_rows([concat_cols(row) for row in grid])


def diag_part(a: Node) -> Node:
    """Diagonal como vector columna"""
    if a.rows != a.cols:
        raise ShapeError(f"diag_part: matriz no cuadrada {a.shape}")
    return a.tape.record(np.diag(a.value).reshape(-1, 1).copy(), [(a, lambda g: np.diag(g[:, 0]))])


def diag_embed(a: Node) -> Node:
    """Vector columna -> matriz diagonal"""
    if a.cols != 1:
        raise ShapeError(f"diag_embed: se esperaba una columna, shape={a.shape}")
    return a.tape.record(np.diag(a.value[:, 0]), [(a, lambda g: np.diag(g).reshape(-1, 1).copy())])


# ---------------------------------------------------------------------------
# comprobación por diferencias finitas
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[Tape, Dict[str, Node]], Node], arrays: Dict[str, np.ndarray],
                       seed: int = 0, eps: float = 1e-5) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Gradiente analítico y por diferencias centrales de un escalar fn(tape, nodos).

    Ambas evaluaciones usan la misma semilla (números aleatorios comunes).
    """
    def evaluate(values: Dict[str, np.ndarray]) -> Tuple[Tape, Node]:
        tape = Tape(seed)
        nodes = {name: tape.variable(name, v) for name, v in values.items()}
        return tape, fn(tape, nodes)

    tape, out = evaluate(arrays)
    analytic = tape.backward(out)

    numeric: Dict[str, np.ndarray] = {}
    for name, base in arrays.items():
        base = as_matrix(base)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            shifted = {k: as_matrix(v) for k, v in arrays.items()}
            plus, minus = base.copy(), base.copy()
            plus[idx] += eps
            minus[idx] -= eps
            shifted[name] = plus
            f_plus = evaluate(shifted)[1].item()
            shifted[name] = minus
            f_minus = evaluate(shifted)[1].item()
            grad[idx] = (f_plus - f_minus) / (2.0 * eps)
        numeric[name] = grad
    return analytic, numeric
