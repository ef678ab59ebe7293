# tests/test_distributions.py
import numpy as np
import pytest
from scipy import stats

from app.core.autodiff import Tape, derive_seed, numerical_gradient, sum as node_sum
from app.core.errors import DomainError, UnsupportedDofError
from app.services.distributions import (
    InvWishartParams, MatrixNormalParams, WishartParams, gamma_logpdf, gamma_sample_reparam,
    invgamma_logpdf, invwishart_logpdf, invwishart_sample, matrix_normal_sample, mvn_logpdf,
    resw_sample, wishart_logpdf, wishart_sample, wishart_sample_features,
)

SCALE = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
SCALE4 = np.array([[1.5, 0.4, -0.2, 0.1], [0.4, 1.0, 0.3, 0.0], [-0.2, 0.3, 0.8, -0.1], [0.1, 0.0, -0.1, 0.6]])


def _draws(sampler, count, seed=0):
    return np.stack([sampler(Tape(derive_seed(seed, d))).value for d in range(count)])


def test_wishart_logpdf_matches_scipy():
    """Log-densidad de Wishart contra scipy.stats"""
    tape = Tape()
    s = SCALE @ SCALE + np.eye(3)
    params = WishartParams(scale=tape.constant(SCALE), dof=tape.constant(5.5))
    expected = stats.wishart.logpdf(s, df=5.5, scale=SCALE)
    assert wishart_logpdf(tape.constant(s), params).item() == pytest.approx(expected, rel=1e-10)


def test_invwishart_logpdf_matches_scipy():
    """Log-densidad de Wishart inversa contra scipy.stats"""
    tape = Tape()
    g = SCALE @ SCALE + np.eye(3)
    params = InvWishartParams(scale=tape.constant(SCALE), dof=tape.constant(4.2))
    expected = stats.invwishart.logpdf(g, df=4.2, scale=SCALE)
    assert invwishart_logpdf(tape.constant(g), params).item() == pytest.approx(expected, rel=1e-10)


def test_mvn_logpdf_sums_columns():
    """La log-densidad normal suma las columnas independientes"""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2))
    mean = rng.normal(size=(3, 1))
    tape = Tape()
    out = mvn_logpdf(tape.constant(x), tape.constant(mean), tape.constant(SCALE))
    expected = sum(stats.multivariate_normal.logpdf(x[:, k], mean[:, 0], SCALE) for k in range(2))
    assert out.item() == pytest.approx(expected, rel=1e-10)


def test_gamma_and_invgamma_logpdf_match_scipy():
    tape = Tape()
    x = np.array([[0.4], [1.3], [2.7]])
    out = gamma_logpdf(tape.constant(x), tape.constant(2.5), tape.constant(1.7))
    assert out.item() == pytest.approx(stats.gamma.logpdf(x, a=2.5, scale=1 / 1.7).sum(), rel=1e-10)
    out = invgamma_logpdf(tape.constant(x), tape.constant(3.0), tape.constant(0.8))
    assert out.item() == pytest.approx(stats.invgamma.logpdf(x, a=3.0, scale=0.8).sum(), rel=1e-10)


def test_gamma_reparam_gradient():
    """Gradiente implícito de la muestra Gamma con números aleatorios comunes"""
    arrays = {"shape": np.array([[0.7], [3.0], [40.0]]), "rate": np.array([[1.5]])}

    def fn(tape, n):
        return node_sum(gamma_sample_reparam(n["shape"], n["rate"], tape))

    analytic, numeric = numerical_gradient(fn, arrays, seed=3)
    for name in arrays:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("shape,rate", [(0.6, 1.0), (2.5, 1.0), (2.5, 2.0)])
def test_gamma_sample_mean_and_shape_derivative(shape, rate):
    """E[z] = a/b y, promediando dz/da por muestra, ∂E[z]/∂a = 1/b"""
    tape = Tape(11)
    a = tape.variable("shape", np.full((20000, 1), shape))
    z = gamma_sample_reparam(a, tape.constant(rate), tape)
    grads = tape.backward(node_sum(z))
    sem = np.sqrt(shape) / rate / np.sqrt(20000)
    assert z.value.mean() == pytest.approx(shape / rate, abs=5 * sem)
    assert grads["shape"].mean() == pytest.approx(1.0 / rate, abs=0.03 / rate)


def test_wishart_sample_gradient():
    """Bartlett reparametrizado: gradiente respecto a la escala y los grados de libertad"""
    rng = np.random.default_rng(1)
    weights = rng.normal(size=(3, 3))
    arrays = {"scale": SCALE, "dof": np.array([[4.5]])}

    def fn(tape, n):
        s = invwishart_sample(InvWishartParams(scale=n["scale"], dof=n["dof"]), tape)
        return node_sum(s * tape.constant(weights))

    analytic, numeric = numerical_gradient(fn, arrays, seed=7)
    # la escala se lee solo por su triángulo inferior
    numeric_scale = np.tril(numeric["scale"]) + np.tril(numeric["scale"], -1).T
    sym_analytic = analytic["scale"] + analytic["scale"].T - np.diag(np.diag(analytic["scale"]))
    np.testing.assert_allclose(np.tril(sym_analytic), np.tril(numeric_scale), rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(analytic["dof"], numeric["dof"], rtol=1e-4, atol=1e-6)


def test_wishart_sample_mean():
    """E[S] = N·V"""
    draws = _draws(lambda t: wishart_sample(WishartParams(t.constant(SCALE), t.constant(6.0)), t), 2000)
    np.testing.assert_allclose(draws.mean(axis=0), 6.0 * SCALE, atol=0.6)


def test_invwishart_sample_mean():
    """E[G] = Ψ/(ν-P-1)"""
    draws = _draws(lambda t: invwishart_sample(InvWishartParams(t.constant(SCALE), t.constant(12.0)), t), 2000)
    np.testing.assert_allclose(draws.mean(axis=0), SCALE / 8.0, atol=0.02)


@pytest.mark.slow
def test_wishart_sample_variance():
    """Con escala K/N: Var(S_ij) = (K_ij² + K_ii·K_jj)/N"""
    n = 10.0
    draws = _draws(lambda t: wishart_sample(WishartParams(t.constant(SCALE / n), t.constant(n)), t), 8000, seed=4)
    expected = (SCALE ** 2 + np.outer(np.diag(SCALE), np.diag(SCALE))) / n
    np.testing.assert_allclose(draws.var(axis=0, ddof=1), expected, rtol=0.12)


def _sampler(family, scale, dof):
    if family == "wishart":
        return lambda t: wishart_sample(WishartParams(t.constant(scale), t.constant(dof)), t)
    return lambda t: invwishart_sample(InvWishartParams(t.constant(scale), t.constant(dof)), t)


def _same_distribution(a, b, entries):
    for i, j in entries:
        result = stats.ks_2samp(a[:, i, j], b[:, i, j])
        assert result.pvalue > 1e-3, f"entrada ({i}, {j}): p={result.pvalue:.2e}"


@pytest.mark.slow
@pytest.mark.parametrize("family,dof,sub_dof", [("wishart", 6.0, 6.0), ("invwishart", 9.0, 7.0)])
def test_sub_block_marginal(family, dof, sub_dof):
    """El bloque 2×2 de W(V, N) es W(V₁₁, N); el de W⁻¹(Ψ, ν) es W⁻¹(Ψ₁₁, ν-2)"""
    full = _draws(_sampler(family, SCALE4, dof), 1500, seed=20)[:, :2, :2]
    direct = _draws(_sampler(family, SCALE4[:2, :2], sub_dof), 1500, seed=21)
    _same_distribution(full, direct, [(0, 0), (0, 1), (1, 1)])


@pytest.mark.slow
@pytest.mark.parametrize("family,dof", [("wishart", 6.0), ("invwishart", 9.0)])
def test_permuted_scale_permutes_samples(family, dof):
    """Muestrear con PΨPᵀ equivale a permutar las muestras con Ψ"""
    perm = [2, 0, 3, 1]
    permuted = _draws(_sampler(family, SCALE4[perm][:, perm], dof), 1500, seed=30)
    original = _draws(_sampler(family, SCALE4, dof), 1500, seed=31)[:, perm][:, :, perm]
    _same_distribution(permuted, original, [(0, 0), (0, 1), (2, 3), (3, 3)])


@pytest.mark.parametrize("delta", [1.0, 3.0])
@pytest.mark.parametrize("count", [3, 8])
def test_invwishart_gaussian_conjugacy_on_grid(delta, count):
    """Prior W⁻¹(δ s₀, δ+2) por verosimilitud normal frente al posterior cerrado W⁻¹(δ s₀ + Σv², δ+2+n)"""
    s0 = 0.7
    v = 1.3 * np.random.default_rng(int(10 * delta) + count).normal(size=(1, count))
    grid = np.linspace(1e-3, 40.0, 4000)
    tape = Tape()
    prior = InvWishartParams(tape.constant(delta * s0), tape.constant(delta + 2.0))
    observed = tape.constant(v)
    log_joint = np.array([
        invwishart_logpdf(tape.constant(g), prior).item() + mvn_logpdf(observed, None, tape.constant(g)).item()
        for g in grid
    ])
    unnormalized = np.exp(log_joint - log_joint.max())
    numeric = unnormalized / np.trapezoid(unnormalized, grid)
    # en 1D W⁻¹(ψ, ν) es InvGamma(ν/2, ψ/2)
    closed = stats.invgamma.pdf(grid, a=(delta + 2.0 + count) / 2, scale=(delta * s0 + np.sum(v ** 2)) / 2)
    closed = closed / np.trapezoid(closed, grid)
    total_variation = 0.5 * np.trapezoid(np.abs(numeric - closed), grid)
    assert total_variation < 1e-4


@pytest.mark.slow
def test_one_dimensional_invwishart_is_invgamma():
    """Con P=1, W⁻¹(ψ, ν) es InvGamma(ν/2, ψ/2)"""
    draws = _draws(lambda t: invwishart_sample(InvWishartParams(t.constant(0.8), t.constant(5.0)), t), 3000)
    result = stats.kstest(draws.ravel(), stats.invgamma(a=2.5, scale=0.4).cdf)
    assert result.pvalue > 1e-3


def test_matrix_normal_sample_shape():
    tape = Tape(2)
    mean = tape.constant(np.ones((3, 2)))
    out = matrix_normal_sample(MatrixNormalParams(mean, tape.constant(SCALE), tape.constant(np.eye(2))), tape)
    assert out.shape == (3, 2)


def test_singular_dof_is_rejected():
    """dof <= P-1 no está soportado"""
    tape = Tape()
    with pytest.raises(UnsupportedDofError):
        wishart_sample(WishartParams(tape.constant(SCALE), tape.constant(1.5)), tape)
    with pytest.raises(DomainError):
        gamma_sample_reparam(tape.constant(-1.0), tape.constant(1.0), tape)


def test_feature_wishart_rank_and_resw_limit():
    """Wishart por características es singular con N < P; ResW tiende a I con α grande"""
    rng = np.random.default_rng(0)
    g = wishart_sample_features(np.eye(10), 3, rng)
    eig = np.linalg.eigvalsh(g)
    assert np.sum(eig > 1e-10 * eig.max()) == 3
    near_identity = resw_sample(10, 10, 1e6, rng)
    np.testing.assert_allclose(near_identity, np.eye(10), atol=1e-5)
    with pytest.raises(DomainError):
        resw_sample(3, 3, -1.0, rng)
