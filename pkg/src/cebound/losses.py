"""Training objectives, all written to be maximized.

Every cost is built from Gaussian differences between sample batches.  In
stabilized mode a Gaussian of variance ``v`` evaluated at a difference of
squared length ``s`` in ``d`` dimensions is ``exp(-s / (2 v d))``; otherwise the
normalized density ``(2 pi v)^(-d/2) exp(-s / (2 v))`` is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gram import gauss_gram_t, sq_dists_t
from .linalg_ad import Tensor, as_tensor, exp, log, mul, nuclear_norm, square, tsum


class UnderflowError(FloatingPointError):
    """A normalizing sum underflowed to zero; the variances are too small."""


@dataclass(frozen=True)
class LossConfig:
    v_p: float = 0.01
    v_q: float = 0.01
    stabilized: bool = True
    epsilon: float = 1e-12
    trainable_params: bool = False
    allow_unequal_variances: bool = False

    def __post_init__(self):
        if not (self.v_p > 0 and self.v_q > 0):
            raise ValueError("variances must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.v_p != self.v_q and not self.allow_unequal_variances:
            raise ValueError(
                "v_p and v_q differ; set allow_unequal_variances=True to use unequal variances"
            )


@dataclass
class CostTerms:
    """A differentiable cost together with its detached ingredients."""

    cost: Tensor
    inner: float
    q_norm: float
    p_norm: float | None = None


def _gauss_of_sqdist(S, v, d, stabilized):
    if stabilized:
        return exp(mul(S, -1.0 / (2.0 * v * d)))
    return mul(exp(mul(S, -1.0 / (2.0 * v))), (2.0 * math.pi * v) ** (-0.5 * d))


def _check_batches(X, Xp):
    X, Xp = as_tensor(X), as_tensor(Xp)
    if X.ndim != 2 or Xp.ndim != 2 or X.shape[0] == 0 or Xp.shape[0] == 0:
        raise ValueError("cost inputs must be non-empty N x d batches")
    if X.shape[1] != Xp.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Xp.shape[1]}")
    return X, Xp


def _nonzero(value, what):
    if not value > 0:
        raise UnderflowError(f"{what} underflowed to zero; increase the variance")


def kl_mdn_cost(X, Xp, cfg: LossConfig) -> Tensor:
    """Mean log-likelihood of the data under the generated mixture.

    ``(1/N) sum_n log((1/K) sum_k G(X_n - X'_k; v_q) + epsilon)``.
    """
    X, Xp = _check_batches(X, Xp)
    G = _gauss_of_sqdist(sq_dists_t(X, Xp), cfg.v_q, X.shape[1], cfg.stabilized)
    return log(G.mean(axis=1) + cfg.epsilon).mean()


def nip_cost(X, Xp, cfg: LossConfig) -> CostTerms:
    """Normalized inner product ``<p,q>^2 / <q,q>`` between data and generated mixtures.

    ``p_norm`` is ``<p,p>``, the value the ratio can reach at best.
    """
    X, Xp = _check_batches(X, Xp)
    d = X.shape[1]
    st = cfg.stabilized
    inner = _gauss_of_sqdist(sq_dists_t(X, Xp), cfg.v_p + cfg.v_q, d, st).mean()
    q_norm = _gauss_of_sqdist(sq_dists_t(Xp, Xp), 2.0 * cfg.v_q, d, st).mean()
    p_norm = _gauss_of_sqdist(sq_dists_t(X.detach(), X.detach()), 2.0 * cfg.v_p, d, st).mean()
    _nonzero(q_norm.item(), "the model norm")
    cost = square(inner) / q_norm
    return CostTerms(cost, inner.item(), q_norm.item(), p_norm.item())


def nuclear_cost(X, Xp, v: float) -> Tensor:
    """Nuclear norm of the stabilized Gaussian cross Gram between two batches."""
    X, Xp = _check_batches(X, Xp)
    return nuclear_norm(gauss_gram_t(X, Xp, v))


def elbo_nuclear_cost(X, Xgen, Y, Ygen, vX: float, vY: float) -> Tensor:
    """Nuclear norm of the joint Gram between encoder pairs and decoder pairs.

    Row ``i`` is the data pair ``(X_i, Ygen_i)`` with ``Ygen = E(X)``; column
    ``j`` is the generated pair ``(Xgen_j, Y_j)`` with ``Xgen = D(Y)``.
    """
    X, Xgen = _check_batches(X, Xgen)
    Ygen, Y = _check_batches(Ygen, Y)
    if X.shape[0] != Ygen.shape[0] or Xgen.shape[0] != Y.shape[0]:
        raise ValueError("each sample needs its paired feature")
    return nuclear_norm(gauss_gram_t(X, Xgen, vX) * gauss_gram_t(Ygen, Y, vY))


def conditional_nip_cost(X, recon, cfg: LossConfig) -> CostTerms:
    """Contrastive conditional cost for an encoder-mixture-decoder.

    ``recon[n]`` holds the ``K`` reconstructions of sample ``n``.  The model
    norm only pairs reconstructions of the same sample.
    """
    X, recon = as_tensor(X), as_tensor(recon)
    if recon.ndim != 3 or recon.shape[1] < 1:
        raise ValueError("reconstructions must be N x K x d with K >= 1")
    N, K, d = recon.shape
    if X.shape != (N, d):
        raise ValueError(f"data shape {X.shape} does not match reconstructions {recon.shape}")
    st = cfg.stabilized
    S = tsum(square(recon - X.reshape(N, 1, d)), axis=-1)
    inner = _gauss_of_sqdist(S, cfg.v_p + cfg.v_q, d, st).mean()
    if N * K * K * d <= 4_000_000:
        q_norm = fan_gauss(recon, np.full(recon.shape, cfg.v_q), st).mean()
    else:
        q_norm = _gauss_of_sqdist(sq_dists_t(recon, recon), 2.0 * cfg.v_q, d, st).mean()
    _nonzero(q_norm.item(), "the conditional model norm")
    return CostTerms(square(inner) / q_norm, inner.item(), q_norm.item())


def _diag_gauss(diff_sq: Tensor, var: Tensor, stabilized: bool) -> Tensor:
    """Diagonal Gaussian from squared differences and variances, reducing the last axis."""
    quad = diff_sq / mul(var, 2.0)
    if stabilized:
        return exp(mul(quad.mean(axis=-1), -1.0))
    logc = mul(log(mul(var, 2.0 * math.pi)), 0.5)
    return exp(mul(tsum(quad + logc, axis=-1), -1.0))


def fan_gauss(means, variances, stabilized: bool) -> Tensor:
    """``G[..., i, j] = N(m_i - m_j; v_i + v_j)`` for diagonal components on the last two axes.

    One fused graph node; the pairwise tensors are never exposed to autodiff.
    """
    m, v = as_tensor(means), as_tensor(variances)
    d = m.shape[-1]
    delta = m.data[..., :, None, :] - m.data[..., None, :, :]
    s = v.data[..., :, None, :] + v.data[..., None, :, :]
    quad = delta * delta / (2.0 * s)
    if stabilized:
        G = np.exp(-quad.mean(axis=-1))
    else:
        G = np.exp(-np.sum(quad + 0.5 * np.log(2.0 * math.pi * s), axis=-1))

    def backward(g):
        w = (g * G)[..., None]
        if stabilized:
            d_delta = -w * delta / (s * d)
            d_s = w * quad / (s * d)
        else:
            d_delta = -w * delta / s
            d_s = w * (quad - 0.5) / s
        return d_delta.sum(axis=-2) - d_delta.sum(axis=-3), d_s.sum(axis=-2) + d_s.sum(axis=-3)

    return Tensor(G, parents=(m, v), backward=backward, op="fan_gauss")


def parametric_mixture_cost(X, means, weights, variances, cfg: LossConfig) -> CostTerms:
    """Ratio cost for a model mixture with its own weights and diagonal variances.

    Marginal form: ``means`` is ``K x d``, ``weights`` is ``K`` and
    ``variances`` is ``K x d``.  Conditional form: a leading ``N`` axis on all
    three, one mixture per data sample.  The data mixture uses the isotropic
    variance ``cfg.v_p``.
    """
    X = as_tensor(X)
    means, weights, variances = as_tensor(means), as_tensor(weights), as_tensor(variances)
    conditional = means.ndim == 3
    if means.shape != variances.shape or weights.shape != means.shape[:-1]:
        raise ValueError("means, variances and weights have inconsistent shapes")
    if X.ndim != 2 or X.shape[1] != means.shape[-1]:
        raise ValueError("data and mixture dimensions differ")
    if conditional and means.shape[0] != X.shape[0]:
        raise ValueError("conditional mixtures need one fan per sample")
    if np.any(weights.data < 0) or np.max(np.abs(weights.data.sum(axis=-1) - 1.0)) > 1e-8:
        raise ValueError("weights must be nonnegative and sum to 1 across outputs")
    if np.any(variances.data <= 0):
        raise ValueError("variances must be positive")
    st = cfg.stabilized
    N, d = X.shape
    if conditional:
        K = means.shape[1]
        diff = means - X.reshape(N, 1, d)
        g = _diag_gauss(square(diff), variances + cfg.v_p, st)
        inner = tsum(weights * g, axis=-1).mean()
        ww = weights.reshape(N, K, 1) * weights.reshape(N, 1, K)
        q_norm = tsum(ww * fan_gauss(means, variances, st), axis=(1, 2)).mean()
    else:
        K = means.shape[0]
        diff = means.reshape(1, K, d) - X.reshape(N, 1, d)
        g = _diag_gauss(square(diff), variances.reshape(1, K, d) + cfg.v_p, st)
        inner = (g * weights.reshape(1, K)).sum(axis=1).mean()
        ww = weights.reshape(K, 1) * weights.reshape(1, K)
        q_norm = tsum(ww * fan_gauss(means, variances, st))
    _nonzero(q_norm.item(), "the model norm")
    return CostTerms(square(inner) / q_norm, inner.item(), q_norm.item())


def ae_mse_cost(X, recon) -> Tensor:
    """Negative mean squared reconstruction error (maximized like every other cost)."""
    X, recon = as_tensor(X), as_tensor(recon)
    N, K, d = recon.shape
    return mul(tsum(square(recon - X.reshape(N, 1, d)), axis=-1).mean(), -1.0)
