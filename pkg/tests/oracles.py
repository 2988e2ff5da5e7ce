"""Independent reference computations shared by the tests.

Nothing here calls into cebound; each helper is a direct transcription of a
definition (quadrature of a density product, explicit loops over pairs).
"""

import math

import numpy as np
from scipy.special import roots_legendre


def mixture_pdf(means, variances, weights, pts):
    """Normalized diagonal mixture density at ``pts`` (P x d)."""
    means = np.atleast_2d(means)
    out = np.zeros(pts.shape[0])
    for m, v, w in zip(means, variances, weights):
        v = np.broadcast_to(v, m.shape)
        q = (((pts - m) ** 2) / v).sum(axis=1)
        out += w * np.exp(-0.5 * q) / np.sqrt(np.prod(2 * np.pi * v))
    return out


def composite_legendre(lo, hi, panels, order=10):
    x, w = roots_legendre(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def quadrature_box(mixtures, pad=12.0):
    """Per-axis nodes and weights wide enough to hold every mixture's mass."""
    d = mixtures[0][0].shape[1]
    axes = []
    for k in range(d):
        lo = min((m[:, k] - pad * np.sqrt(v[:, k])).min() for m, v, _ in mixtures)
        hi = max((m[:, k] + pad * np.sqrt(v[:, k])).max() for m, v, _ in mixtures)
        smallest = min(np.sqrt(v[:, k]).min() for _, v, _ in mixtures)
        panels = int(math.ceil((hi - lo) / (0.5 * smallest)))
        axes.append(composite_legendre(lo, hi, panels))
    return axes


def integrate(fn, axes):
    """Tensor-product quadrature of ``fn(points)`` over the node grid."""
    if len(axes) == 1:
        (x, w), = axes
        return float(np.dot(fn(x[:, None]), w))
    (x0, w0), (x1, w1) = axes
    total = 0.0
    for xi, wi in zip(x0, w0):
        pts = np.column_stack([np.full_like(x1, xi), x1])
        total += wi * np.dot(fn(pts), w1)
    return float(total)


def naive_sq_dists(X, Xp):
    out = np.zeros((X.shape[0], Xp.shape[0]))
    for i in range(X.shape[0]):
        for j in range(Xp.shape[0]):
            out[i, j] = sum((X[i, k] - Xp[j, k]) ** 2 for k in range(X.shape[1]))
    return out


def naive_ratio_sums(Xh, X, Yh, Y, ax, ay, exclude_self=False):
    """Unshifted ``(sxy, sx, sy)`` by explicit loops."""
    M, N = Xh.shape[0], X.shape[0]
    sxy, sx, sy = np.zeros(M), np.zeros(M), np.zeros(M)
    for m in range(M):
        for n in range(N):
            if exclude_self and m == n:
                continue
            kx = math.exp(-ax * float(np.sum((Xh[m] - X[n]) ** 2)))
            ky = math.exp(-ay * float(np.sum((Yh[m] - Y[n]) ** 2)))
            sxy[m] += kx * ky
            sx[m] += kx
            sy[m] += ky
    return sxy, sx, sy


def central_diff(f, x, h=1e-6):
    """Gradient of scalar ``f`` (plain numpy in, float out) by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        saved = x[i]
        x[i] = saved + h
        fp = f(x.copy())
        x[i] = saved - h
        fm = f(x.copy())
        x[i] = saved
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
