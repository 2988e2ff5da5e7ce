"""Sample estimators for the conditional bound, mutual information, and related checks.

The data are read as the mixture ``p(X, Y) = (1/N) sum_n N(X - X_n; v_X) N(Y - Y_n; v_Y)``.
Noisy copies ``X_hat = X + sqrt(v_X) z`` and ``Y_hat = Y + sqrt(v_Y) s`` are
draws from that mixture, and each estimator averages a ratio of kernel sums
over them.  The O(N^2) sums run in :mod:`cebound.kernels`.

Every kernel row is shifted by its smallest squared distance before
exponentiation.  The shifts cancel exactly in all three ratio estimators, so
no row can underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .linalg_ad import Tensor, as_tensor, log, mul, nuclear_norm, svd
from .losses import UnderflowError


@dataclass(frozen=True)
class NoisySamplePair:
    X: np.ndarray
    Y: np.ndarray
    X_hat: np.ndarray
    Y_hat: np.ndarray
    v_X: float
    v_Y: float

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class BoundReport:
    iteration: int
    cost: float
    bound: float
    inner: float | None = None
    q_norm: float | None = None
    p_cond_norm: float | None = None
    shannon_mi: float | None = None
    renyi_mi: float | None = None


def _batch(a):
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def make_noisy_pairs(X, Y, v_X: float, v_Y: float, rng) -> NoisySamplePair:
    """Attach fresh Gaussian noise of variance ``v_X`` and ``v_Y``."""
    X, Y = _batch(X), _batch(Y)
    if X.shape[0] != Y.shape[0] or X.shape[0] < 2:
        raise ValueError("need N >= 2 paired samples")
    if v_X < 0 or v_Y < 0:
        raise ValueError("variances must be nonnegative")
    X_hat = X + math.sqrt(v_X) * rng.standard_normal(X.shape)
    Y_hat = Y + math.sqrt(v_Y) * rng.standard_normal(Y.shape)
    return NoisySamplePair(X, Y, X_hat, Y_hat, float(v_X), float(v_Y))


# -- differentiable ratio sums ------------------------------------------------
def ratio_sums_t(X_hat, X, Y_hat, Y, ax: float, ay: float, exclude_self=False):
    """Shifted row sums ``(sxy, sx, sy)`` as one ``3 x N`` Tensor, plus the shifts.

    Gradients flow to ``Y_hat`` and ``Y`` only; ``X`` enters as data.
    """
    Y_hat, Y = as_tensor(Y_hat), as_tensor(Y)
    Xh, Xc = _batch(X_hat), _batch(X)
    sxy, sx, sy, cx, cy = kernels.ratio_sums(Xh, Xc, Y_hat.data, Y.data, ax, ay, exclude_self)
    if not (np.all(sy > 0) and np.all(sx > 0)):
        raise UnderflowError("a kernel row sum underflowed")

    def backward(g):
        gYh, gY = kernels.ratio_sums_grad(
            Xh, Xc, Y_hat.data, Y.data, ax, ay, cx, cy, g[0], g[2], exclude_self
        )
        return gYh, gY

    out = Tensor(np.stack([sxy, sx, sy]), parents=(Y_hat, Y), backward=backward, op="ratio_sums")
    return out, cx, cy


def _check_var(v, name):
    if not v > 0:
        raise ValueError(f"{name} must be positive for this estimator")


def p_cond_norm_t(X_hat, X, Y_hat, Y, v_X, v_Y) -> Tensor:
    """Differentiable estimate of the squared conditional norm of p(X|Y)."""
    _check_var(v_X, "v_X")
    _check_var(v_Y, "v_Y")
    d = _batch(X).shape[1]
    ax, ay = 1.0 / (2.0 * v_X), 1.0 / (2.0 * v_Y)
    S, cx, _ = ratio_sums_t(X_hat, X, Y_hat, Y, ax, ay)
    scale = (2.0 * math.pi * v_X) ** (-0.5 * d) * np.exp(-ax * cx)
    return mul(S[0] / S[2], scale).mean()


def _density_ratio_t(X_hat, X, Y_hat, Y, v_X, v_Y, leave_one_out):
    _check_var(v_X, "v_X")
    _check_var(v_Y, "v_Y")
    ax, ay = 1.0 / (2.0 * v_X), 1.0 / (2.0 * v_Y)
    S, _, _ = ratio_sums_t(X_hat, X, Y_hat, Y, ax, ay, exclude_self=leave_one_out)
    n = S.shape[1] - 1 if leave_one_out else S.shape[1]
    return S[0] * n / (S[1] * S[2])


def shannon_mi_t(X_hat, X, Y_hat, Y, v_X, v_Y, leave_one_out=False) -> Tensor:
    """``(1/N) sum_m log(N sxy_m / (sx_m sy_m))``, the plug-in Shannon MI.

    With ``leave_one_out`` the pair that generated each noisy sample is left
    out of its own sums and ``N`` becomes ``N - 1``.  That removes the upward
    resubstitution bias but the log then biases the estimate downward by more,
    so the full sums are the default here.
    """
    return log(_density_ratio_t(X_hat, X, Y_hat, Y, v_X, v_Y, leave_one_out)).mean()


def renyi_mi_t(X_hat, X, Y_hat, Y, v_X, v_Y, leave_one_out=True) -> Tensor:
    """``(1/N) sum_m N sxy_m / (sx_m sy_m)``, the plug-in of ``int p^2 / (p_X p_Y)``.

    The ratio is linear in the density estimates, so leaving out each sample's
    own pair makes it nearly unbiased; the full sums overshoot by roughly
    ``1 / (4 pi v N)`` per unit area of support.
    """
    return _density_ratio_t(X_hat, X, Y_hat, Y, v_X, v_Y, leave_one_out).mean()


def estimate_p_cond_norm(pairs: NoisySamplePair) -> float:
    return p_cond_norm_t(pairs.X_hat, pairs.X, pairs.Y_hat, pairs.Y, pairs.v_X, pairs.v_Y).item()


def estimate_shannon_mi(pairs: NoisySamplePair, leave_one_out=False) -> float:
    return shannon_mi_t(
        pairs.X_hat, pairs.X, pairs.Y_hat, pairs.Y, pairs.v_X, pairs.v_Y, leave_one_out
    ).item()


def estimate_renyi_mi(pairs: NoisySamplePair, leave_one_out=True) -> float:
    return renyi_mi_t(
        pairs.X_hat, pairs.X, pairs.Y_hat, pairs.Y, pairs.v_X, pairs.v_Y, leave_one_out
    ).item()


# -- cost terms ---------------------------------------------------------------------
def _recon_array(recon, n, d):
    r = np.asarray(recon.data if isinstance(recon, Tensor) else recon, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != n or r.shape[2] != d:
        raise ValueError(f"reconstructions of shape {r.shape} do not match N={n}, d={d}")
    return r


def _fan_sq(r):
    """Within-fan squared distances ``N x K x K`` via the three-term identity."""
    sq = np.einsum("nkd,nkd->nk", r, r)
    S = sq[:, :, None] + sq[:, None, :] - 2.0 * np.einsum("nid,njd->nij", r, r)
    np.maximum(S, 0.0, out=S)
    idx = np.arange(r.shape[1])
    S[:, idx, idx] = 0.0
    return S


def estimate_cost_terms(pairs: NoisySamplePair, recon, v_q: float):
    """``(inner, q_norm, cost)`` with normalized Gaussians.

    ``recon[n]`` must be decoded from the noisy feature ``Y_hat[n]``.
    """
    _check_var(v_q, "v_q")
    X = pairs.X
    n, d = X.shape
    r = _recon_array(recon, n, d)
    v_in = pairs.v_X + v_q
    S = np.einsum("nkd,nkd->nk", r - X[:, None, :], r - X[:, None, :])
    inner = float(np.mean(np.exp(-S / (2.0 * v_in)))) * (2.0 * math.pi * v_in) ** (-0.5 * d)
    q = float(np.mean(np.exp(-_fan_sq(r) / (4.0 * v_q)))) * (4.0 * math.pi * v_q) ** (-0.5 * d)
    if not q > 0:
        raise UnderflowError("the conditional model norm underflowed")
    return inner, q, inner * inner / q


def highdim_cost_bound(X, recon, Y, Y_hat, v_X: float, v_Y: float, v_q: float | None = None):
    """Relative cost and bound for high-dimensional data, both in (0, 1].

    Gaussians of variance ``2 v_X`` are evaluated without constants and with
    squared distances divided by the dimension; this requires ``v_q == v_X``.
    """
    if v_q is not None and v_q != v_X:
        raise ValueError("the relative forms require v_q == v_X")
    _check_var(v_X, "v_X")
    _check_var(v_Y, "v_Y")
    X, Y, Y_hat = _batch(X), _batch(Y), _batch(Y_hat)
    n, d = X.shape
    r = _recon_array(recon, n, d)
    a = 1.0 / (4.0 * v_X * d)
    S = np.einsum("nkd,nkd->nk", r - X[:, None, :], r - X[:, None, :])
    num = np.exp(-a * S).sum()
    den = np.exp(-a * _fan_sq(r)).sum()
    cost_new = num * num / (n * den)
    ay = 1.0 / (2.0 * v_Y * Y.shape[1])
    sxy, _, sy, cx, _ = kernels.ratio_sums(X, X, Y_hat, Y, a, ay)
    bound_new = float(np.mean(np.exp(-a * cx) * sxy / sy))
    return float(cost_new), bound_new


# -- discrete decomposition check ------------------------------------------------------
@dataclass(frozen=True)
class DecompositionReport:
    nuclear: float
    bound: float
    trace: float | None
    holds: bool
    equality_gap: float | None


def discrete_decomposition_check(P, Q, grid, v: float, rtol: float = 1e-10) -> DecompositionReport:
    """Nuclear norm of ``diag(sqrt P) K diag(sqrt Q)`` against its Gaussian bound.

    ``K[i, j] = N(g_i - g_j; 2 v)``.  The bound is ``N(0; 2 v)``, reached when
    ``P == Q`` (the matrix is then PSD and its nuclear norm is its trace).
    """
    grid = _batch(grid)
    P, Q = np.asarray(P, dtype=np.float64), np.asarray(Q, dtype=np.float64)
    G = grid.shape[0]
    if P.shape != (G,) or Q.shape != (G,):
        raise ValueError("densities and grid have different sizes")
    for name, w in (("P", P), ("Q", Q)):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be nonnegative and sum to 1")
    d = grid.shape[1]
    diff = grid[:, None, :] - grid[None, :, :]
    K = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (4.0 * v)) * (4.0 * math.pi * v) ** (-0.5 * d)
    A = np.sqrt(P)[:, None] * K * np.sqrt(Q)[None, :]
    nuc = float(svd(A).S.sum())
    bound = (4.0 * math.pi * v) ** (-0.5 * d)
    same = np.array_equal(P, Q)
    trace = float(np.trace(A)) if same else None
    return DecompositionReport(
        nuclear=nuc,
        bound=bound,
        trace=trace,
        holds=nuc <= bound * (1.0 + rtol),
        equality_gap=abs(nuc - bound) / bound if same else None,
    )


def nuclear_bound_gap(X, Xp, v: float) -> tuple[float, int]:
    """``(||K_XX'||_*, N)`` for the stabilized cross Gram of equal-size batches."""
    from .gram import gauss_gram_t

    X, Xp = _batch(X), _batch(Xp)
    if X.shape != Xp.shape:
        raise ValueError("batches must have equal size")
    return nuclear_norm(gauss_gram_t(X, Xp, v)).item(), X.shape[0]


__all__ = [
    "NoisySamplePair", "BoundReport", "make_noisy_pairs", "estimate_p_cond_norm",
    "estimate_cost_terms", "estimate_shannon_mi", "estimate_renyi_mi", "highdim_cost_bound",
    "discrete_decomposition_check", "DecompositionReport", "p_cond_norm_t", "shannon_mi_t",
    "renyi_mi_t", "ratio_sums_t", "nuclear_bound_gap",
]
