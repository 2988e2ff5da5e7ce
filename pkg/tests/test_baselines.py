import math

import numpy as np
import pytest
import scipy.linalg

from cebound import baselines
from cebound.baselines import KernelDependenceConfig


def _corr(seed, n=40, rho=0.8):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    return x, rho * x + math.sqrt(1 - rho**2) * rng.normal(size=(n, 1))


def test_centered_gram_has_zero_row_and_column_sums():
    X = np.random.default_rng(0).normal(size=(15, 2))
    R = baselines.centered_gram(X, 0.1)
    np.testing.assert_allclose(R.sum(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(R.sum(axis=1), 0, atol=1e-12)
    n = len(X)
    H = np.eye(n) - np.ones((n, n)) / n
    D = ((X[:, None] - X[None]) ** 2).sum(-1)
    raw = np.exp(-D / (4 * 0.1)) / (4 * math.pi * 0.1)
    np.testing.assert_allclose(R, H @ raw @ H, atol=1e-12)


def test_canonical_correlations_match_generalized_eigenproblem():
    cfg = KernelDependenceConfig(v=0.05, epsilon=0.5)
    X, Y = _corr(1)
    s = baselines.kernel_canonical_correlations(X, Y, cfg)
    Rx, Ry = baselines.centered_gram(X, cfg.v), baselines.centered_gram(Y, cfg.v)
    n = len(X)
    I = np.eye(n)
    Z = np.zeros((n, n))
    L = np.block([[Z, Rx @ Ry], [Ry @ Rx, Z]])
    B = np.block([[(Rx + cfg.epsilon * I) @ (Rx + cfg.epsilon * I), Z], [Z, (Ry + cfg.epsilon * I) @ (Ry + cfg.epsilon * I)]])
    w = scipy.linalg.eigh(L, B, eigvals_only=True)
    np.testing.assert_allclose(np.sort(w)[::-1][:n], s, atol=1e-9)
    np.testing.assert_allclose(np.sort(w)[:n], -s, atol=1e-9)
    kgv = baselines.kica_kgv(X, Y, cfg)
    top = np.sort(w)[::-1][:n]
    assert kgv == pytest.approx(-0.5 * np.sum(np.log(1 - top**2)), rel=1e-9)
    assert np.all(s < 1)


def test_kernel_statistics_detect_dependence():
    X, Y = _corr(2, n=60)
    cfg = KernelDependenceConfig(v=0.5, epsilon=0.1)  # kernel width on the scale of unit-variance data
    rng = np.random.default_rng(3)
    for stat in (baselines.kica_kgv, baselines.hsic_nocco):
        score = lambda a, b: stat(a, b, cfg)  # noqa: E731
        null = baselines.permutation_null(score, X, Y, n_perm=30, rng=rng)
        assert score(X, Y) > np.max(null)


def test_nocco_is_trace_of_normalized_cross_operator():
    cfg = KernelDependenceConfig()
    X, Y = _corr(4, n=20)
    Rx, Ry = baselines.centered_gram(X, cfg.v), baselines.centered_gram(Y, cfg.v)
    I = np.eye(20)
    Bx = scipy.linalg.sqrtm((Rx + I) @ (Rx + I)).real
    By = scipy.linalg.sqrtm((Ry + I) @ (Ry + I)).real
    ref = np.trace(np.linalg.solve(Bx, Rx @ Ry) @ np.linalg.inv(By))
    assert baselines.hsic_nocco(X, Y, cfg) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("variant", ["shannon", "renyi"])
def test_mine_training_raises_the_estimate(variant):
    X, Y = _corr(5, n=500, rho=0.9)
    rng = np.random.default_rng(6)
    est = baselines.MineEstimator(1, 1, hidden=(16,), variant=variant, rng=0)
    trace = baselines.train_mine(est, X, Y, steps=300, batch_size=128, rng=rng, lr=5e-3)
    assert np.mean(trace[-30:]) > np.mean(trace[:30])
    final = baselines.evaluate_mine(est, X, Y, rng)
    if variant == "shannon":
        # a Donsker-Varadhan estimate stays below the true MI (0.83 nats) up to sampling noise
        assert 0.2 < final < 0.83 + 0.15
    else:
        assert final > 0


def test_config_errors():
    with pytest.raises(ValueError):
        KernelDependenceConfig(v=0.0)
    with pytest.raises(ValueError):
        baselines.MineEstimator(1, 1, variant="tsallis")
    with pytest.raises(ValueError):
        baselines.kica_kgv(np.zeros((3, 1)), np.zeros((4, 1)))
