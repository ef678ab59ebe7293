# tests/test_training.py
import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import DomainError, NumericError
from app.models.specs import KernelFamily, KernelSpec, Schedule
from app.services import training
from app.services.diwp_model import ParameterStore
from app.services.inference import predict
from app.services.training import (
    AdamState, adam_step, batch_indices, clip_gradients, default_batch_size,
    default_train_samples, train,
)
from tests.factories import toy_model, toy_regression


def test_adam_first_step_moves_by_learning_rate():
    """El primer paso de Adam mueve cada entrada ≈ lr en contra del gradiente"""
    params = ParameterStore({"w": np.array([[1.0, -2.0]])})
    grads = {"w": np.array([[0.5, -3.0]])}
    new_params, state = adam_step(params, grads, AdamState.zeros(params), lr=0.1)
    np.testing.assert_allclose(new_params["w"], [[0.9, -1.9]], atol=1e-6)
    assert state.step == 1
    np.testing.assert_allclose(state.m["w"], 0.1 * grads["w"])
    np.testing.assert_allclose(params["w"], [[1.0, -2.0]])


def test_adam_zero_lr_and_negative_lr():
    params = ParameterStore({"w": np.ones((2, 2))})
    grads = {"w": np.full((2, 2), 3.0)}
    unchanged, _ = adam_step(params, grads, AdamState.zeros(params), lr=0.0)
    np.testing.assert_array_equal(unchanged["w"], params["w"])
    with pytest.raises(DomainError):
        adam_step(params, grads, AdamState.zeros(params), lr=-1e-3)


def test_clip_gradients_global_norm():
    grads = {"a": np.array([[3.0]]), "b": np.array([[4.0]])}
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert clipped["a"][0, 0] == pytest.approx(0.6)
    same, _ = clip_gradients(grads, 10.0)
    assert same is grads


def test_schedule_two_phase_and_validation():
    """Dos tramos: lr alto en la primera mitad y bajo en la segunda"""
    schedule = Schedule.two_phase(10, 1e-2, 1e-3)
    assert schedule.lr_at(5) == 1e-2
    assert schedule.lr_at(6) == 1e-3
    with pytest.raises(ValueError):
        schedule.lr_at(11)
    with pytest.raises(ValueError):
        Schedule(total_steps=10, segments=[{"start": 1, "end": 4, "lr": 0.1}, {"start": 6, "end": 10, "lr": 0.1}])


def test_batch_indices_cover_each_epoch():
    """Cada época recorre una permutación completa, determinista por (seed, época)"""
    steps = [batch_indices(10, 4, step, seed=3) for step in (1, 2, 3)]
    assert [len(s) for s in steps] == [4, 4, 2]
    assert sorted(np.concatenate(steps).tolist()) == list(range(10))
    np.testing.assert_array_equal(batch_indices(10, 4, 2, seed=3), steps[1])
    assert not np.array_equal(batch_indices(10, 4, 4, seed=3), steps[0])


def test_defaults_by_dataset_size():
    assert default_batch_size(500) == 500
    assert default_batch_size(5000) == 256
    assert default_train_samples(100) == 10
    assert default_train_samples(5000) == 1


def test_train_is_deterministic():
    """Dos entrenamientos con la misma semilla producen los mismos registros y parámetros"""
    x, y = toy_regression()
    first = train(toy_model(), x, y, Schedule.constant(3, 1e-2), batch_size=6, seed=4, n_samples=1)
    second = train(toy_model(), x, y, Schedule.constant(3, 1e-2), batch_size=6, seed=4, n_samples=1)
    assert first.records == second.records
    assert all(np.array_equal(first.model.params[n], second.model.params[n]) for n in first.model.params)
    assert [r.step for r in first.records] == [1, 2, 3]
    assert set(first.records[0].kl_terms) == {"omega", "layer2", "output"}


def test_resume_matches_uninterrupted_run():
    """Entrenar 2 pasos y reanudar 2 más equivale a entrenar 4 seguidos"""
    x, y = toy_regression()
    schedule = Schedule.two_phase(4)
    full = train(toy_model(), x, y, schedule, batch_size=5, seed=9, n_samples=1)

    head = toy_model()
    first_half = train(head, x, y, Schedule.constant(2, schedule.lr_at(1)), batch_size=5, seed=9, n_samples=1)
    resumed = train(first_half.model, x, y, schedule, batch_size=5, seed=9, n_samples=1, state=first_half.state)
    assert [r.step for r in resumed.records] == [3, 4]
    assert resumed.records == full.records[2:]
    for name in full.model.params:
        np.testing.assert_array_equal(resumed.model.params[name], full.model.params[name])


def test_failed_step_is_skipped(monkeypatch):
    """Un paso con NumericError no modifica los parámetros y se registra como saltado"""
    x, y = toy_regression()
    real = training.elbo_batch
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericError("complemento de Schur negativo", layer="layer2")
        return real(*args, **kwargs)

    monkeypatch.setattr(training, "elbo_batch", flaky)
    result = train(toy_model(), x, y, Schedule.constant(3, 1e-2), seed=1, n_samples=1)
    assert result.records[1].elbo is None
    assert result.records[1].skipped == 1
    assert result.records[2].elbo is not None
    assert result.state.consecutive_skips == 0


def test_too_many_consecutive_skips_abort(monkeypatch):
    x, y = toy_regression()

    def broken(*args, **kwargs):
        raise NumericError("cholesky falló", layer="output")

    monkeypatch.setattr(training, "elbo_batch", broken)
    monkeypatch.setattr(settings, "MAX_SKIPPED_STEPS", 2)
    seen = []
    with pytest.raises(NumericError):
        train(toy_model(), x, y, Schedule.constant(10, 1e-2), seed=1, on_step=seen.append)
    assert len(seen) == 2


def test_checkpoint_callback_frequency():
    x, y = toy_regression()
    saved = []
    train(toy_model(), x, y, Schedule.constant(4, 1e-2), seed=0, n_samples=1, checkpoint_every=2,
          on_checkpoint=lambda model, state: saved.append(state.step))
    assert saved == [2, 4]


@pytest.mark.slow
def test_training_improves_test_loglik():
    """En una regresión 1-D sencilla el entrenamiento mejora la log-verosimilitud de test"""
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, size=(60, 1))
    y = np.sin(2 * x) + 0.05 * rng.normal(size=x.shape)
    y = (y - y.mean()) / y.std()
    x_train, y_train, x_test, y_test = x[:54], y[:54], x[54:], y[54:]
    kernel = KernelSpec(family=KernelFamily.SQUARED_EXPONENTIAL, bandwidth=1.0)
    model = toy_model(layer_count=2, inducing=20, input_dim=1, x=x_train, y=y_train, kernel=kernel)
    model.params["inducing.X"] = np.linspace(-3, 3, 20).reshape(-1, 1)

    before = predict(model, x_test, y_test, n_samples=20, seed=1).mean_loglik
    result = train(model, x_train, y_train, Schedule.constant(1500, 1e-2), seed=0, n_samples=2)
    after = predict(result.model, x_test, y_test, n_samples=20, seed=1).mean_loglik

    elbos = [r.elbo for r in result.records if r.elbo is not None]
    assert np.mean(elbos[-100:]) > np.mean(elbos[:100])
    assert after - before >= 1.0
