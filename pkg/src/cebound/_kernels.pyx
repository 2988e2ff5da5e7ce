# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled O(N^2) kernels for the ratio-of-sums estimators.

All loops run in a fixed order so results do not depend on scheduling.
"""

import numpy as np

from libc.math cimport exp, INFINITY


cdef inline double _sqdist(const double[:, ::1] A, Py_ssize_t i,
                           const double[:, ::1] B, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0, t
    for k in range(A.shape[1]):
        t = A[i, k] - B[j, k]
        s += t * t
    return s


def ratio_sums(const double[:, ::1] Xh, const double[:, ::1] X,
               const double[:, ::1] Yh, const double[:, ::1] Y,
               double ax, double ay, bint exclude_self=False):
    """Row sums of shifted Gaussian factors between noisy and clean samples.

    Returns ``(sxy, sx, sy, cx, cy)`` where, for every row ``m``,
    ``sx[m] = sum_n exp(-ax * (|Xh_m - X_n|^2 - cx[m]))`` and ``cx[m]`` is the
    smallest squared distance in that row (likewise for ``y``), and ``sxy``
    sums the product of both factors.  With ``exclude_self`` the pair
    ``n == m`` is left out of every sum.
    """
    cdef Py_ssize_t M = Xh.shape[0], N = X.shape[0], m, n
    if Yh.shape[0] != M or Y.shape[0] != N:
        raise ValueError("row counts of X and Y batches differ")
    if Xh.shape[1] != X.shape[1] or Yh.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    if exclude_self and (M != N or N < 2):
        raise ValueError("excluding self pairs needs square batches with N >= 2")
    sxy_a = np.empty(M)
    sx_a = np.empty(M)
    sy_a = np.empty(M)
    cx_a = np.empty(M)
    cy_a = np.empty(M)
    dx_a = np.empty(N)
    dy_a = np.empty(N)
    cdef double[::1] sxy = sxy_a, sx = sx_a, sy = sy_a, cx = cx_a, cy = cy_a
    cdef double[::1] dx = dx_a, dy = dy_a
    cdef double mx, my, kx, ky, axy, ax_, ay_
    with nogil:
        for m in range(M):
            mx = INFINITY
            my = INFINITY
            for n in range(N):
                if exclude_self and n == m:
                    continue
                dx[n] = _sqdist(Xh, m, X, n)
                dy[n] = _sqdist(Yh, m, Y, n)
                if dx[n] < mx:
                    mx = dx[n]
                if dy[n] < my:
                    my = dy[n]
            axy = 0.0
            ax_ = 0.0
            ay_ = 0.0
            for n in range(N):
                if exclude_self and n == m:
                    continue
                kx = exp(-ax * (dx[n] - mx))
                ky = exp(-ay * (dy[n] - my))
                axy += kx * ky
                ax_ += kx
                ay_ += ky
            sxy[m] = axy
            sx[m] = ax_
            sy[m] = ay_
            cx[m] = mx
            cy[m] = my
    return sxy_a, sx_a, sy_a, cx_a, cy_a


def ratio_sums_grad(const double[:, ::1] Xh, const double[:, ::1] X,
                    const double[:, ::1] Yh, const double[:, ::1] Y,
                    double ax, double ay,
                    const double[::1] cx, const double[::1] cy,
                    const double[::1] g_xy, const double[::1] g_y,
                    bint exclude_self=False):
    """Gradient of ``sum_m g_xy[m] * sxy[m] + g_y[m] * sy[m]`` w.r.t. ``Yh`` and ``Y``.

    The row shifts ``cx`` and ``cy`` are held fixed.
    """
    cdef Py_ssize_t M = Xh.shape[0], N = X.shape[0], D = Y.shape[1], m, n, k
    gYh_a = np.zeros((M, D))
    gY_a = np.zeros((N, D))
    cdef double[:, ::1] gYh = gYh_a, gY = gY_a
    cdef double kx, ky, w, t
    with nogil:
        for m in range(M):
            for n in range(N):
                if exclude_self and n == m:
                    continue
                ky = exp(-ay * (_sqdist(Yh, m, Y, n) - cy[m]))
                if g_xy[m] != 0.0:
                    kx = exp(-ax * (_sqdist(Xh, m, X, n) - cx[m]))
                else:
                    kx = 0.0
                w = 2.0 * ay * ky * (g_xy[m] * kx + g_y[m])
                for k in range(D):
                    t = w * (Yh[m, k] - Y[n, k])
                    gYh[m, k] -= t
                    gY[n, k] += t
    return gYh_a, gY_a


def gauss_row_sums(const double[:, ::1] A, const double[:, ::1] B, double a):
    """``s[m] = sum_n exp(-a * |A_m - B_n|^2)`` without any shift."""
    cdef Py_ssize_t M = A.shape[0], N = B.shape[0], m, n
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    s_a = np.empty(M)
    cdef double[::1] s = s_a
    cdef double acc
    with nogil:
        for m in range(M):
            acc = 0.0
            for n in range(N):
                acc += exp(-a * _sqdist(A, m, B, n))
            s[m] = acc
    return s_a
