# app/services/training.py
"""Adam sobre el almacenamiento sin restricción y bucle de entrenamiento"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple
import logging
import math

import numpy as np

from app.core.autodiff import Tape, derive_seed, scale
from app.core.config import settings
from app.core.errors import DecompositionError, DomainError, NumericError
from app.models.responses import MetricsRecord
from app.models.specs import Schedule
from app.services.diwp_model import DIWPModel, ParameterStore
from app.services.inference import elbo_batch

logger = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 1000
DEFAULT_BATCH = 256
SMALL_DATASET = 2000


@dataclass
class AdamState:
    """Momentos por parámetro y contador de pasos"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ParameterStore) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.items()},
                   v={k: np.zeros_like(a) for k, a in params.items()})


@dataclass
class TrainingState:
    adam: AdamState
    step: int = 0
    skipped_total: int = 0
    consecutive_skips: int = 0


@dataclass
class TrainResult:
    model: DIWPModel
    state: TrainingState
    records: List[MetricsRecord]


def default_batch_size(n: int) -> int:
    return n if n < FULL_BATCH_LIMIT else DEFAULT_BATCH


def default_train_samples(n: int) -> int:
    return 10 if n < SMALL_DATASET else 1


def adam_step(params: ParameterStore, grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> Tuple[ParameterStore, AdamState]:
    """Actualización de Adam con corrección de sesgo (minimiza: resta el gradiente)"""
    if lr < 0:
        raise DomainError(f"adam_step: lr={lr} negativo")
    step = state.step + 1
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    new_params = params.copy()
    m, v = {}, {}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise DomainError(f"adam_step: gradiente de {name} con shape {g.shape} != {value.shape}")
        m[name] = state.beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - state.beta1) * g
        v[name] = state.beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v[name] / bc2) + state.eps
        new_params[name] = value - (lr / bc1) * m[name] / denom
    return new_params, AdamState(m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Recorte por norma global"""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Índices del batch del paso (1-based): permutación por época derivada de (seed, época)"""
    per_epoch = math.ceil(n / batch_size)
    epoch, position = divmod(step - 1, per_epoch)
    perm = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)
    return perm[position * batch_size:(position + 1) * batch_size]


def train(model: DIWPModel, x: np.ndarray, y: np.ndarray, schedule: Schedule, batch_size: Optional[int] = None,
          seed: int = 0, n_samples: Optional[int] = None, state: Optional[TrainingState] = None,
          on_step: Optional[Callable[[MetricsRecord], None]] = None,
          on_checkpoint: Optional[Callable[[DIWPModel, TrainingState], None]] = None,
          checkpoint_every: int = 0) -> TrainResult:
    """
    Bucle de entrenamiento: minibatch por épocas, elbo_batch, backward, Adam.

    Con `state` se reanuda desde state.step; el batch y las muestras del paso
    t dependen solo de (seed, t), así que la reanudación es exacta.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = x.shape[0]
    batch_size = min(batch_size or default_batch_size(n), n)
    n_samples = n_samples or default_train_samples(n)
    state = state or TrainingState(adam=AdamState.zeros(model.params))
    records: List[MetricsRecord] = []

    logger.info(f"🔄 Entrenando: N={n}, batch={batch_size}, muestras={n_samples}, "
                f"pasos {state.step + 1}..{schedule.total_steps}")

    for step in range(state.step + 1, schedule.total_steps + 1):
        lr = schedule.lr_at(step)
        idx = batch_indices(n, batch_size, step, seed)
        tape = Tape(derive_seed(seed, step))
        elbo_value: Optional[float] = None
        loglik_value: Optional[float] = None
        kl_terms: Dict[str, float] = {}
        grads: Optional[Dict[str, np.ndarray]] = None
        reason = ""
        try:
            elbo, report = elbo_batch(model, x[idx], y[idx], n, n_samples, tape)
            grads = tape.backward(scale(elbo, -1.0 / n))
            elbo_value, loglik_value, kl_terms = report.total, report.expected_loglik, report.kl_terms
            bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                reason = f"gradiente no finito en {bad}"
                grads = None
        except (NumericError, DecompositionError, DomainError) as exc:
            reason = exc.message

        if grads is None:
            state.skipped_total += 1
            state.consecutive_skips += 1
            logger.warning(f"⚠️ Paso {step} saltado: {reason}")
            if state.consecutive_skips > settings.MAX_SKIPPED_STEPS:
                raise NumericError(f"{state.consecutive_skips} pasos consecutivos saltados; último: {reason}",
                                   layer="training")
        else:
            grads, norm = clip_gradients(grads, settings.GRAD_CLIP_NORM)
            if norm > settings.GRAD_CLIP_NORM:
                logger.debug(f"Gradiente recortado en el paso {step}: norma {norm:.3e}")
            model.params, state.adam = adam_step(model.params, grads, state.adam, lr)
            state.consecutive_skips = 0
        state.step = step

        record = MetricsRecord(step=step, lr=lr, elbo=elbo_value, loglik=loglik_value,
                               kl_terms=kl_terms, skipped=state.skipped_total)
        records.append(record)
        if on_step is not None:
            on_step(record)
        if on_checkpoint is not None and checkpoint_every and step % checkpoint_every == 0:
            on_checkpoint(model, state)
        if step % 500 == 0:
            logger.info(f"🔄 Paso {step}/{schedule.total_steps}: ELBO={elbo_value}")

    logger.info(f"✅ Entrenamiento terminado en el paso {state.step} ({state.skipped_total} pasos saltados)")
    return TrainResult(model=model, state=state, records=records)
