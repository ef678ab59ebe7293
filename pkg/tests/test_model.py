# tests/test_model.py
import numpy as np
import pytest
from scipy import stats

from app.core.autodiff import Tape, derive_seed
from app.core.errors import DomainError, ShapeError
from app.models.specs import Likelihood, ModelSpec
from app.services.diwp_model import (
    DIWPModel, HiddenLayerParams, InputLayerParams, ParameterStore, initial_inducing_inputs, input_gram,
    input_gram_blocks, layer_name, likelihood_logpdf, one_hot, output_posterior, q_hidden_sample_logpdf,
    q_omega_sample_logpdf,
)
from tests.factories import toy_model


def test_initialize_matches_expected_shapes(regression_data):
    """La inicialización crea exactamente los parámetros que espera la arquitectura"""
    x, y = regression_data
    spec = ModelSpec.uniform(input_dim=2, layer_count=3, inducing_count=5)
    model = DIWPModel.initialize(spec, x, y, seed=1)
    assert model.params.shapes() == model.expected_shapes()
    assert "layer3.V" in model.params
    assert model.params["input.V"].shape == (2, 2)
    # σ² inicial = 0.1·var(y)
    noise = np.logaddexp(0.0, model.params["output.noise_raw"][0, 0])
    assert noise == pytest.approx(0.1 * np.var(y), rel=1e-10)


def test_initialize_nngp_and_classification(regression_data):
    """Las capas en el límite NNGP no tienen parámetros; la clasificación no tiene ruido"""
    x, _ = regression_data
    labels = (x[:, 0] > 0).astype(float)
    spec = ModelSpec.uniform(input_dim=2, output_dim=2, layer_count=2, inducing_count=4,
                             likelihood=Likelihood.CATEGORICAL, nngp_limit=True)
    model = DIWPModel.initialize(spec, x, labels)
    names = model.params.names()
    assert not any(n.startswith(("layer2.", "input.delta")) for n in names)
    assert "output.noise_raw" not in model.params
    assert model.params["output.v"].shape == (4, 2)


def test_initialize_is_deterministic(regression_data):
    x, y = regression_data
    spec = ModelSpec.uniform(input_dim=2, layer_count=2, inducing_count=4)
    first = DIWPModel.initialize(spec, x, y, seed=3).params
    second = DIWPModel.initialize(spec, x, y, seed=3).params
    assert all(np.array_equal(first[n], second[n]) for n in first)


def test_inconsistent_parameters_rejected(regression_data):
    """Parámetros que faltan o con shape distinta levantan ShapeError"""
    x, y = regression_data
    spec = ModelSpec.uniform(input_dim=2, layer_count=2, inducing_count=4)
    params = DIWPModel.initialize(spec, x, y).params
    arrays = params.as_dict()
    del arrays["layer2.V"]
    with pytest.raises(ShapeError):
        DIWPModel(spec, ParameterStore(arrays))
    with pytest.raises(ShapeError):
        params["output.v"] = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        DIWPModel.initialize(spec, x[:, :1], y)


def test_spec_validation():
    """kernels y nngp_limit deben tener una entrada por capa"""
    with pytest.raises(ValueError):
        ModelSpec(layer_count=2, input_dim=1, kernels=[], nngp_limit=[False, False])
    with pytest.raises(ValueError):
        ModelSpec.uniform(input_dim=1, output_dim=1, likelihood=Likelihood.CATEGORICAL)


def test_inducing_inputs_with_replacement():
    """Con más puntos inducidos que filas se repite con ruido"""
    x = np.arange(6.0).reshape(3, 2)
    out = initial_inducing_inputs(x, 5, np.random.default_rng(0))
    assert out.shape == (5, 2)
    assert np.max(np.abs(out - np.round(out))) < 1e-2


def test_input_gram_blocks_match_full_gram():
    """Los bloques de G₁ coinciden con la matriz completa"""
    model = toy_model()
    tape = Tape()
    bound = model.bind_constants(tape)
    x = tape.constant(np.random.default_rng(0).normal(size=(4, 2)))
    omega = tape.constant(np.array([[1.5, 0.2], [0.2, 0.7]]))
    full = input_gram(bound.input, bound.inducing, x, omega).value
    g_ii, g_it, g_tt = input_gram_blocks(bound.input, bound.inducing, x, omega)
    np.testing.assert_allclose(g_ii.value, full[:3, :3], atol=1e-12)
    np.testing.assert_allclose(g_it.value, full[:3, 3:], atol=1e-12)
    np.testing.assert_allclose(g_tt.value[:, 0], np.diag(full)[3:], atol=1e-12)


def test_output_posterior_matches_direct_formula():
    """Σ = (K⁻¹ + Λ)⁻¹ y media Σ Λ v"""
    model = toy_model()
    tape = Tape()
    bound = model.bind_constants(tape)
    a = np.random.default_rng(2).normal(size=(3, 3))
    k = a @ a.T + np.eye(3)
    mean, sigma = output_posterior(bound.output, tape.constant(k), 0)
    lam = bound.output.lambda_diag.value[:, 0]
    expected = np.linalg.inv(np.linalg.inv(k) + np.diag(lam))
    np.testing.assert_allclose(sigma.value, expected, rtol=1e-8)
    np.testing.assert_allclose(mean.value[:, 0], expected @ (lam * bound.output.v.value[:, 0]), rtol=1e-8)


def test_gaussian_likelihood_matches_scipy():
    tape = Tape()
    f = np.array([[0.1], [0.5], [-0.3]])
    y = np.array([0.0, 0.7, -0.2])
    out = likelihood_logpdf(tape.constant(f), y, Likelihood.GAUSSIAN, tape.constant(0.2))
    expected = stats.norm.logpdf(y, f[:, 0], np.sqrt(0.2)).sum()
    assert out.item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        likelihood_logpdf(tape.constant(f), y, Likelihood.GAUSSIAN)


def test_categorical_likelihood_and_one_hot():
    tape = Tape()
    logits = np.array([[2.0, 0.0], [0.0, 1.0]])
    out = likelihood_logpdf(tape.constant(logits), np.array([0, 1]), Likelihood.CATEGORICAL)
    expected = -np.log1p(np.exp(-2.0)) - np.log1p(np.exp(-1.0))
    assert out.item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        one_hot(np.array([0, 2]), 2)


def test_layer_names():
    assert layer_name(1) == "omega"
    assert layer_name(3) == "layer3"


@pytest.mark.slow
def test_hidden_posterior_sample_mean():
    """E[G_ii] bajo Q es (δK + VVᵀ)/(δ+γ)"""
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3))
    k = a @ a.T / 3 + 0.3 * np.eye(3)
    v = 0.4 * rng.normal(size=(3, 3))
    delta, gamma = 6.0, 2.0
    draws = []
    for d in range(4000):
        tape = Tape(derive_seed(5, d))
        params = HiddenLayerParams(delta=tape.constant(delta), V=tape.constant(v), gamma=tape.constant(gamma))
        g, _, _ = q_hidden_sample_logpdf(params, tape.constant(k), tape)
        draws.append(g.value)
    expected = (delta * k + v @ v.T) / (delta + gamma)
    np.testing.assert_allclose(np.mean(draws, axis=0), expected, atol=0.05 * np.abs(expected).max())


@pytest.mark.slow
def test_omega_posterior_sample_mean():
    """E[Ω] bajo Q es (δ₁I + V₁V₁ᵀ)/(δ₁+γ₁)"""
    v = np.array([[0.8, -0.3], [0.2, 0.5]])
    delta, gamma = 5.0, 3.0
    draws = []
    for d in range(4000):
        tape = Tape(derive_seed(6, d))
        params = InputLayerParams(delta=tape.constant(delta), V=tape.constant(v), gamma=tape.constant(gamma))
        omega, _, _ = q_omega_sample_logpdf(params, 2, tape)
        draws.append(omega.value)
    expected = (delta * np.eye(2) + v @ v.T) / (delta + gamma)
    np.testing.assert_allclose(np.mean(draws, axis=0), expected, atol=0.05 * np.abs(expected).max())
