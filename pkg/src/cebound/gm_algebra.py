"""Closed-form algebra of Gaussians and Gaussian mixtures with diagonal variances.

Two evaluation modes exist.  The *true-density* mode uses normalized
Gaussians.  The *stabilized* mode drops every normalizing constant and
averages the quadratic form over dimensions, which keeps values in (0, 1]
for high-dimensional data.  The two modes are never mixed in one expression.

Double sums are accumulated with :func:`math.fsum`, which is exactly rounded
and therefore independent of the summation order.  This makes
``mixture_inner(p, q) == mixture_inner(q, p)`` hold bit for bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian:
    """Diagonal Gaussian density; ``variance`` may be a scalar for isotropic use."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.asarray(self.variance, dtype=float)
        if var.ndim == 0:
            var = np.full(mean.shape, float(var))
        if mean.ndim != 1 or var.shape != mean.shape:
            raise ValueError("mean and variance must be vectors of equal length")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if not np.all(var > 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def d(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted sum of diagonal Gaussians stored as ``K x d`` arrays."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray = None
    stabilized: bool = False

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if means.ndim != 2 or means.shape[0] < 1:
            raise ValueError("means must be a non-empty K x d array")
        var = np.asarray(self.variances, dtype=float)
        if var.ndim == 0:
            var = np.full(means.shape, float(var))
        elif var.ndim == 1:
            # one isotropic variance per component
            var = np.repeat(var[:, None], means.shape[1], axis=1)
        if var.shape != means.shape:
            raise ValueError("variances must broadcast to the means' shape")
        if not np.all(var > 0):
            raise ValueError("variances must be positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        K = means.shape[0]
        if self.weights is None:
            w = np.full(K, 1.0 / K)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (K,):
                raise ValueError("one weight per component is required")
            if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_components(cls, components, weights=None, stabilized=False):
        components = list(components)
        if not components:
            raise ValueError("at least one component is required")
        d = components[0].d
        if any(c.d != d for c in components):
            raise ValueError("all components must share the dimension")
        return cls(
            np.stack([c.mean for c in components]),
            np.stack([c.variance for c in components]),
            weights,
            stabilized,
        )

    @property
    def components(self) -> list[Gaussian]:
        return [Gaussian(m, v) for m, v in zip(self.means, self.variances)]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


def _log_gauss_diff(diff, var, stabilized):
    """Log of N(diff; var) per leading index, reducing the last axis."""
    quad = diff * diff / (2.0 * var)
    if stabilized:
        return -quad.mean(axis=-1)
    return -quad.sum(axis=-1) - 0.5 * np.log(2.0 * math.pi * var).sum(axis=-1)


def gauss_inner(a: Gaussian, b: Gaussian, stabilized: bool = False) -> float:
    """Inner product of two Gaussians, ``N(m_a - m_b; v_a + v_b)``."""
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    return float(np.exp(_log_gauss_diff(a.mean - b.mean, a.variance + b.variance, stabilized)))


def _pair_terms(p: GaussianMixture, q: GaussianMixture) -> np.ndarray:
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    if p.stabilized != q.stabilized:
        raise ValueError("cannot mix stabilized and true-density mixtures")
    diff = p.means[:, None, :] - q.means[None, :, :]
    var = p.variances[:, None, :] + q.variances[None, :, :]
    logk = _log_gauss_diff(diff, var, p.stabilized)
    return (p.weights[:, None] * q.weights[None, :]) * np.exp(logk)


def mixture_inner(p: GaussianMixture, q: GaussianMixture) -> float:
    """``sum_ij w_i w'_j N(m_i - m'_j; v_i + v'_j)``."""
    return math.fsum(_pair_terms(p, q).ravel())


def mixture_norm(p: GaussianMixture) -> float:
    """Squared L2 norm ``int p(x)^2 dx`` (or its stabilized analogue)."""
    return mixture_inner(p, p)


def mixture_moment(p: GaussianMixture, order: int, max_order: int = 4,
                   max_terms: int = 10_000_000) -> float:
    """Closed form of ``int p(x)^order dx`` for an integer order.

    Every ``order``-tuple of components contributes the integral of a product
    of Gaussians, obtained by completing the square per dimension.  The sum has
    ``K**order`` terms, so both the order and the term count are capped.
    """
    if int(order) != order or order < 2:
        raise ValueError("order must be an integer >= 2")
    order = int(order)
    if order > max_order:
        raise ValueError(f"order {order} exceeds the configured cap {max_order}")
    K = p.n_components
    if K**order > max_terms:
        raise ValueError(f"{K}**{order} terms exceed the cap of {max_terms}")
    idx = np.array(list(itertools.product(range(K), repeat=order)))
    m = p.means[idx]  # T x order x d
    prec = 1.0 / p.variances[idx]
    total = prec.sum(axis=1)
    # C - B^2/A written as a sum of pairwise squared gaps, which avoids cancellation
    quad = np.zeros((idx.shape[0], p.d))
    for a, b in itertools.combinations(range(order), 2):
        gap = m[:, a] - m[:, b]
        quad += prec[:, a] * prec[:, b] * gap * gap
    quad /= 2.0 * total
    if p.stabilized:
        logk = -quad.mean(axis=-1)
    else:
        logk = (
            -quad.sum(axis=-1)
            - 0.5 * (order - 1) * LOG_2PI * p.d
            + 0.5 * np.log(prec).sum(axis=(1, 2))
            - 0.5 * np.log(total).sum(axis=-1)
        )
    w = p.weights[idx].prod(axis=1)
    return math.fsum(w * np.exp(logk))


def eval_density(p: GaussianMixture, x) -> float:
    """``sum_k w_k N(x - m_k; v_k)`` at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (p.d,):
        raise ValueError(f"point has shape {x.shape}, expected ({p.d},)")
    logk = _log_gauss_diff(x[None, :] - p.means, p.variances, p.stabilized)
    return math.fsum(p.weights * np.exp(logk))
