"""Pure numpy versions of the compiled kernels, processed in row blocks."""

import numpy as np

_BLOCK = 256


def _sqdists(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("mnk,mnk->mn", diff, diff)


def ratio_sums(Xh, X, Yh, Y, ax, ay, exclude_self=False):
    M, N = Xh.shape[0], X.shape[0]
    if Yh.shape[0] != M or Y.shape[0] != N:
        raise ValueError("row counts of X and Y batches differ")
    if Xh.shape[1] != X.shape[1] or Yh.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    if exclude_self and (M != N or N < 2):
        raise ValueError("excluding self pairs needs square batches with N >= 2")
    out = [np.empty(M) for _ in range(5)]
    for lo in range(0, M, _BLOCK):
        hi = min(lo + _BLOCK, M)
        dx = _sqdists(Xh[lo:hi], X)
        dy = _sqdists(Yh[lo:hi], Y)
        if exclude_self:
            rows = np.arange(hi - lo)
            dx[rows, lo + rows] = np.inf
            dy[rows, lo + rows] = np.inf
        cx = dx.min(axis=1)
        cy = dy.min(axis=1)
        kx = np.exp(-ax * (dx - cx[:, None]))
        ky = np.exp(-ay * (dy - cy[:, None]))
        out[0][lo:hi] = (kx * ky).sum(axis=1)
        out[1][lo:hi] = kx.sum(axis=1)
        out[2][lo:hi] = ky.sum(axis=1)
        out[3][lo:hi] = cx
        out[4][lo:hi] = cy
    return tuple(out)


def ratio_sums_grad(Xh, X, Yh, Y, ax, ay, cx, cy, g_xy, g_y, exclude_self=False):
    M, N = Xh.shape[0], X.shape[0]
    gYh = np.zeros((M, Y.shape[1]))
    gY = np.zeros((N, Y.shape[1]))
    for lo in range(0, M, _BLOCK):
        hi = min(lo + _BLOCK, M)
        ky = np.exp(-ay * (_sqdists(Yh[lo:hi], Y) - cy[lo:hi, None]))
        kx = np.exp(-ax * (_sqdists(Xh[lo:hi], X) - cx[lo:hi, None]))
        w = 2.0 * ay * ky * (g_xy[lo:hi, None] * kx + g_y[lo:hi, None])
        if exclude_self:
            rows = np.arange(hi - lo)
            w[rows, lo + rows] = 0.0
        gYh[lo:hi] = -(w.sum(axis=1)[:, None] * Yh[lo:hi] - w @ Y)
        gY += w.T @ Yh[lo:hi] - w.sum(axis=0)[:, None] * Y
    return gYh, gY


def gauss_row_sums(A, B, a):
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    s = np.empty(A.shape[0])
    for lo in range(0, A.shape[0], _BLOCK):
        hi = min(lo + _BLOCK, A.shape[0])
        s[lo:hi] = np.exp(-a * _sqdists(A[lo:hi], B)).sum(axis=1)
    return s
