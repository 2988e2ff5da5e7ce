"""Reference dependence measures: MINE critics and two kernel statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg_ad import Tensor, as_tensor, concat, log, square
from .nn import MlpNetwork, OptimizerState, optimizer_step


class MineEstimator:
    """Critic ``f(X, Y)`` for the Donsker-Varadhan (``shannon``) or squared-ratio (``renyi``) bound.

    The renyi critic ends in ``sigmoid + 0.1`` so it stays strictly positive.
    """

    def __init__(self, d_x, d_y, hidden=(64, 64), variant="shannon", rng=None):
        if variant not in ("shannon", "renyi"):
            raise ValueError(f"unknown MINE variant {variant!r}")
        self.variant = variant
        self.network = MlpNetwork([d_x + d_y, *hidden, 1], hidden="tanh", output="linear", rng=rng)

    @property
    def params(self):
        return self.network.params

    def __call__(self, X, Y) -> Tensor:
        out = self.network(concat([as_tensor(X), as_tensor(Y)], axis=1))
        if self.variant == "renyi":
            out = out.sigmoid() + 0.1
        return out


def shuffle_pairs(X, Y, rng):
    """Marginal pairs: ``Y`` permuted within the batch."""
    perm = rng.permutation(as_tensor(Y).shape[0])
    return X, as_tensor(Y)[perm]


def mine_objective(est: MineEstimator, joint, marginal) -> Tensor:
    """Lower bound on the dependence between the paired batches."""
    fj = est(*joint)
    fm = est(*marginal)
    if est.variant == "shannon":
        shift = float(np.max(fm.data))  # constant shift keeps exp in range
        mean_exp = (fm - shift).exp().mean()
        if not mean_exp.item() > 0:
            raise FloatingPointError("log of a non-positive mean")
        return fj.mean() - (log(mean_exp) + shift)
    second = square(fm).mean()
    if not second.item() > 0:
        raise FloatingPointError("non-positive second moment")
    return square(fj.mean()) / second


def train_mine(est: MineEstimator, X, Y, steps, batch_size, rng, lr=1e-3):
    """Fit the critic alone on fixed data; returns the objective trace."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
    state = OptimizerState.for_params(est.params, lr=lr)
    trace = []
    for _ in range(steps):
        idx = rng.choice(len(X), size=min(batch_size, len(X)), replace=False)
        xb, yb = Tensor(X[idx]), Tensor(Y[idx])
        obj = mine_objective(est, (xb, yb), shuffle_pairs(xb, yb, rng))
        for p in est.params:
            p.grad = None
        obj.backward()
        optimizer_step(state, est.params)
        trace.append(obj.item())
    return np.array(trace)


def evaluate_mine(est: MineEstimator, X, Y, rng) -> float:
    X = Tensor(np.asarray(X, dtype=np.float64).reshape(len(X), -1))
    Y = Tensor(np.asarray(Y, dtype=np.float64).reshape(len(Y), -1))
    return mine_objective(est, (X, Y), shuffle_pairs(X, Y, rng)).item()


# -- kernel dependence ------------------------------------------------------------
@dataclass(frozen=True)
class KernelDependenceConfig:
    v: float = 0.001
    epsilon: float = 1.0
    eig_floor: float = 1e-10

    def __post_init__(self):
        if not (self.v > 0 and self.epsilon > 0):
            raise ValueError("kernel variance and regularizer must be positive")


def centered_gram(X, v):
    """``H R H`` with ``R[i, j] = N(X_i - X_j; 2 v)`` and ``H = I - 11^T / N``."""
    X = np.asarray(X, dtype=np.float64)
    X = X[:, None] if X.ndim == 1 else X
    n, d = X.shape
    sq = np.einsum("ij,ij->i", X, X)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    R = np.exp(-D / (4.0 * v)) * (4.0 * math.pi * v) ** (-0.5 * d)
    R = R - R.mean(axis=0, keepdims=True)
    R = R - R.mean(axis=1, keepdims=True)
    return 0.5 * (R + R.T)


def _inv_sqrt_psd(B, floor):
    w, U = np.linalg.eigh(0.5 * (B + B.T))
    return (U / np.sqrt(np.maximum(w, floor))) @ U.T


def _normalized_cross(X, Y, cfg):
    if len(X) != len(Y):
        raise ValueError("X and Y batches must have equal size")
    Rx, Ry = centered_gram(X, cfg.v), centered_gram(Y, cfg.v)
    n = Rx.shape[0]
    eye = np.eye(n)
    B1 = (Rx + cfg.epsilon * eye) @ (Rx + cfg.epsilon * eye)
    B2 = (Ry + cfg.epsilon * eye) @ (Ry + cfg.epsilon * eye)
    A1 = Rx @ Ry
    return _inv_sqrt_psd(B1, cfg.eig_floor) @ A1 @ _inv_sqrt_psd(B2, cfg.eig_floor)


def kernel_canonical_correlations(X, Y, cfg: KernelDependenceConfig = KernelDependenceConfig()):
    """The ``N`` nonnegative eigenvalues of the symmetric-spectrum problem.

    ``[[0, A1], [A2, 0]] v = s [[B1, 0], [0, B2]] v`` has eigenvalues ``+-s_i``
    where ``s_i`` are the singular values of ``B1^(-1/2) A1 B2^(-1/2)``.
    """
    try:
        return np.linalg.svd(_normalized_cross(X, Y, cfg), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"kernel correlation solve failed: {exc}") from exc


def kica_kgv(X, Y, cfg: KernelDependenceConfig = KernelDependenceConfig()) -> float:
    """Kernel generalized variance ``-1/2 sum_i log(1 - s_i^2)``."""
    s = np.clip(kernel_canonical_correlations(X, Y, cfg), 0.0, 1.0 - 1e-15)
    return float(-0.5 * np.sum(np.log1p(-s * s)))


def hsic_nocco(X, Y, cfg: KernelDependenceConfig = KernelDependenceConfig()) -> float:
    """Trace of the normalized cross-covariance ``B1^(-1/2) A1 B2^(-1/2)``."""
    return float(np.trace(_normalized_cross(X, Y, cfg)))


def permutation_null(score, X, Y, n_perm=200, rng=None):
    """Scores of ``(X, Y[perm])`` for ``n_perm`` random permutations."""
    rng = np.random.default_rng(rng)
    Y = np.asarray(Y)
    return np.array([score(X, Y[rng.permutation(len(Y))]) for _ in range(n_perm)])


__all__ = [
    "MineEstimator", "mine_objective", "shuffle_pairs", "train_mine", "evaluate_mine",
    "KernelDependenceConfig", "centered_gram", "kernel_canonical_correlations", "kica_kgv",
    "hsic_nocco", "permutation_null",
]
