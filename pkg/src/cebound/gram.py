"""Pairwise squared distances and stabilized Gaussian Gram matrices.

Distances use the three-term factorization
``|x - x'|^2 = |x|^2 + |x'|^2 - 2 x.x'`` so no ``N x K x d`` difference tensor
is ever formed.  Distances are divided by the data dimension here, and the
Gram step only exponentiates.

The ``*_t`` functions are the differentiable counterparts used by the losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg_ad import Tensor, as_tensor, exp, matmul, mul, relu, square, transpose, tsum


@dataclass(frozen=True)
class DistanceMatrix:
    """``values[i, j] = |X_i - X'_j|^2 / d``."""

    values: np.ndarray
    d: int

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    variance: float
    stabilized: bool = True


def _as_batch(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty N x d batch")
    return X


def pairwise_sq_dists(X, Xp=None) -> DistanceMatrix:
    """Squared distances between rows of ``X`` and ``Xp`` divided by ``d``.

    With ``Xp`` omitted (or the same array) the result is exactly symmetric
    with a zero diagonal.
    """
    X = _as_batch(X, "X")
    same = Xp is None or Xp is X
    Xp = X if same else _as_batch(Xp, "Xp")
    if X.shape[1] != Xp.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Xp.shape[1]}")
    d = X.shape[1]
    rows = np.einsum("ij,ij->i", X, X)
    cols = rows if same else np.einsum("ij,ij->i", Xp, Xp)
    M = rows[:, None] + cols[None, :] - 2.0 * (X @ Xp.T)
    np.maximum(M, 0.0, out=M)
    if same:
        M = 0.5 * (M + M.T)
        np.fill_diagonal(M, 0.0)
    return DistanceMatrix(M / d, d)


def gauss_gram(M: DistanceMatrix, v: float) -> GramMatrix:
    """Entrywise ``exp(-M / (2 v))``."""
    if not v > 0:
        raise ValueError("variance must be positive")
    values = M.values if isinstance(M, DistanceMatrix) else np.asarray(M, dtype=np.float64)
    return GramMatrix(np.exp(-values / (2.0 * v)), float(v))


def joint_gram(MX: DistanceMatrix, vX: float, MY: DistanceMatrix, vY: float) -> GramMatrix:
    """Gram matrix of concatenated ``(X, Y)`` pairs.

    ``exp(-MX/(2 vX) - MY/(2 vY))`` is formed as the product of the two
    individual Grams, so the factorization identity holds bit for bit.
    """
    if MX.shape != MY.shape:
        raise ValueError(f"shape mismatch: {MX.shape} vs {MY.shape}")
    gx, gy = gauss_gram(MX, vX), gauss_gram(MY, vY)
    return GramMatrix(gx.values * gy.values, float("nan"))


# -- differentiable versions -------------------------------------------------
def sq_dists_t(X, Xp) -> Tensor:
    """Raw (undivided) squared distances between two Tensor batches."""
    X, Xp = as_tensor(X), as_tensor(Xp)
    if X.shape[-1] != Xp.shape[-1]:
        raise ValueError(f"dimension mismatch: {X.shape[-1]} vs {Xp.shape[-1]}")
    rows = tsum(square(X), axis=-1)
    cols = tsum(square(Xp), axis=-1)
    cross = matmul(X, transpose(Xp))
    M = rows.reshape(rows.shape + (1,)) + cols.reshape(cols.shape[:-1] + (1, cols.shape[-1]))
    return relu(M - mul(cross, 2.0))


def gauss_gram_t(X, Xp, v) -> Tensor:
    """Stabilized Gram ``exp(-|X_i - X'_j|^2 / (2 v d))``."""
    d = as_tensor(X).shape[-1]
    return exp(mul(sq_dists_t(X, Xp), -1.0 / (2.0 * v * d)))
