import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from cebound.gm_algebra import (
    Gaussian, GaussianMixture, eval_density, gauss_inner, mixture_inner, mixture_moment, mixture_norm,
)
from oracles import integrate, mixture_pdf, quadrature_box


def random_mixture(rng, d, K=None):
    K = K or int(rng.integers(1, 4))
    means = rng.uniform(-1.5, 1.5, (K, d))
    var = rng.uniform(0.05, 0.6, (K, d))
    w = rng.dirichlet(np.ones(K))
    return means, var, w


@pytest.mark.parametrize("d", [1, 2])
def test_inner_and_norm_match_quadrature(d):
    rng = np.random.default_rng(10 + d)
    for _ in range(6):
        p, q = random_mixture(rng, d), random_mixture(rng, d)
        axes = quadrature_box([p, q])
        ref = integrate(lambda x: mixture_pdf(*p, x) * mixture_pdf(*q, x), axes)
        got = mixture_inner(GaussianMixture(*p), GaussianMixture(*q))
        assert got == pytest.approx(ref, rel=1e-8)
        ref_n = integrate(lambda x: mixture_pdf(*p, x) ** 2, axes)
        assert mixture_norm(GaussianMixture(*p)) == pytest.approx(ref_n, rel=1e-8)


@pytest.mark.parametrize("order", [2, 3, 4])
def test_moment_matches_quadrature(order):
    rng = np.random.default_rng(order)
    for d in (1, 2):
        p = random_mixture(rng, d)
        ref = integrate(lambda x: mixture_pdf(*p, x) ** order, quadrature_box([p]))
        assert mixture_moment(GaussianMixture(*p), order) == pytest.approx(ref, rel=1e-8)


def test_single_gaussian_moment_closed_form():
    # int N(x; 0, v)^3 dx = (2 pi v)^-1 / sqrt(3) in 1-D
    v = 0.3
    p = GaussianMixture(np.zeros((1, 1)), v)
    assert mixture_moment(p, 3) == pytest.approx(1 / (2 * math.pi * v * math.sqrt(3)), rel=1e-13)


def test_gauss_inner_is_the_convolution_density():
    a = Gaussian([0.1, -0.2], [0.3, 0.5])
    b = Gaussian([0.4, 0.7], 0.2)
    ref = multivariate_normal.pdf(a.mean - b.mean, cov=np.diag(a.variance + b.variance))
    assert gauss_inner(a, b) == pytest.approx(ref, rel=1e-13)


def test_stabilized_inner_drops_constants_and_averages():
    a = Gaussian([0.0, 0.0, 0.0], 0.1)
    b = Gaussian([0.3, 0.0, -0.3], 0.1)
    expected = math.exp(-(0.09 + 0.09) / (2 * 0.2) / 3)
    assert gauss_inner(a, b, stabilized=True) == pytest.approx(expected, rel=1e-14)
    assert gauss_inner(a, a, stabilized=True) == 1.0


def test_eval_density_matches_scipy():
    rng = np.random.default_rng(3)
    means, var, w = random_mixture(rng, 2, K=3)
    p = GaussianMixture(means, var, w)
    x = np.array([0.2, -0.1])
    ref = sum(wk * multivariate_normal.pdf(x, m, np.diag(v)) for m, v, wk in zip(means, var, w))
    assert eval_density(p, x) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 5), st.integers(1, 6),
       st.booleans())
def test_inner_symmetric_bitwise(seed, K1, K2, d, stab):
    rng = np.random.default_rng(seed)
    p = GaussianMixture(*random_mixture(rng, d, K1), stabilized=stab)
    q = GaussianMixture(*random_mixture(rng, d, K2), stabilized=stab)
    assert mixture_inner(p, q) == mixture_inner(q, p)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_cauchy_schwarz_on_mixtures(seed, K, d):
    rng = np.random.default_rng(seed)
    p = GaussianMixture(*random_mixture(rng, d, K))
    q = GaussianMixture(*random_mixture(rng, d, K))
    assert mixture_inner(p, q) ** 2 <= mixture_norm(p) * mixture_norm(q) * (1 + 1e-12)


def test_stabilized_norm_of_one_component_is_one():
    p = GaussianMixture(np.array([[0.3, 0.4]]), 0.1, stabilized=True)
    assert mixture_norm(p) == 1.0


def test_from_components_round_trip():
    comps = [Gaussian([0.0], 0.1), Gaussian([1.0], 0.2)]
    p = GaussianMixture.from_components(comps, [0.25, 0.75])
    assert p.n_components == 2 and p.d == 1
    assert [c.mean[0] for c in p.components] == [0.0, 1.0]


def test_validation_errors():
    with pytest.raises(ValueError):
        Gaussian([0.0, 1.0], [0.1])
    with pytest.raises(ValueError):
        Gaussian([0.0], [0.0])
    with pytest.raises(ValueError):
        GaussianMixture(np.zeros((2, 1)), 0.1, weights=[0.5, 0.6])
    with pytest.raises(ValueError):
        GaussianMixture(np.zeros((2, 1)), -1.0)
    with pytest.raises(ValueError):
        GaussianMixture.from_components([Gaussian([0.0], 1.0), Gaussian([0.0, 0.0], 1.0)])
    p1 = GaussianMixture(np.zeros((1, 1)), 0.1)
    with pytest.raises(ValueError):
        mixture_inner(p1, GaussianMixture(np.zeros((1, 2)), 0.1))
    with pytest.raises(ValueError):
        mixture_inner(p1, GaussianMixture(np.zeros((1, 1)), 0.1, stabilized=True))
    with pytest.raises(ValueError):
        eval_density(p1, [0.0, 0.0])


def test_moment_caps():
    p = GaussianMixture(np.zeros((20, 1)), 0.1)
    with pytest.raises(ValueError):
        mixture_moment(p, 5)
    with pytest.raises(ValueError):
        mixture_moment(p, 2.5)
    with pytest.raises(ValueError):
        mixture_moment(p, 4, max_terms=1000)
    assert mixture_moment(p, 2) == pytest.approx(mixture_norm(p), rel=1e-13)
