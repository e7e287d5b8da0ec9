# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: small dense Cholesky algebra, unscented moments,
the latent-block Kalman update, k-means assignment and run flagging.

Every function matches its twin in ``_pykernels`` to round-off.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

from .errors import SingularMatrixError

cnp.import_array()


cdef int _chol_inplace(double[:, ::1] low, double* bad) noexcept nogil:
    # lower triangle of `low` holds the input on entry, the factor on exit
    cdef Py_ssize_t n = low.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = low[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > 0.0:
            bad[0] = s
            return <int>j
        s = sqrt(s)
        low[j, j] = s
        for i in range(j + 1, n):
            for k in range(j):
                low[i, j] -= low[i, k] * low[j, k]
            low[i, j] /= s
        for i in range(j):
            low[i, j] = 0.0
    return -1


cpdef cnp.ndarray cholesky(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef double bad = 0.0
    cdef int piv
    if out.shape[0] != out.shape[1]:
        raise ValueError("cholesky needs a square matrix")
    piv = _chol_inplace(out, &bad)
    if piv >= 0:
        raise SingularMatrixError(piv, bad)
    return out


cpdef cnp.ndarray spd_inverse(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] low = cholesky(a)
    cdef Py_ssize_t n = low.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] w = np.zeros((n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] inv = np.empty((n, n))
    cdef double[:, ::1] lv = low
    cdef double[:, ::1] wv = w
    cdef double[:, ::1] iv = inv
    cdef Py_ssize_t i, j, k
    cdef double s
    with nogil:
        # w = low^{-1}, lower triangular forward substitution per column
        for j in range(n):
            wv[j, j] = 1.0 / lv[j, j]
            for i in range(j + 1, n):
                s = 0.0
                for k in range(j, i):
                    s -= lv[i, k] * wv[k, j]
                wv[i, j] = s / lv[i, i]
        # inv = w^T w
        for i in range(n):
            for j in range(i, n):
                s = 0.0
                for k in range(j, n):
                    s += wv[k, i] * wv[k, j]
                iv[i, j] = s
                iv[j, i] = s
    return inv


cpdef cnp.ndarray sigma_points(mean, cov, double scale):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m = np.ascontiguousarray(mean, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] low = np.multiply(cov, scale, dtype=np.float64)
    low = np.ascontiguousarray(low)
    cdef double bad = 0.0
    cdef int piv
    piv = _chol_inplace(low, &bad)
    if piv >= 0:
        raise SingularMatrixError(piv, bad)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.empty((2 * n + 1, n))
    cdef double[:, ::1] pv = pts
    cdef double[:, ::1] lv = low
    cdef double[::1] mv = m
    cdef Py_ssize_t i, j
    with nogil:
        for j in range(n):
            pv[0, j] = mv[j]
        for i in range(n):
            for j in range(n):
                # column i of the factor
                pv[1 + i, j] = mv[j] + lv[j, i]
                pv[1 + n + i, j] = mv[j] - lv[j, i]
    return pts


def unscented_moments(points, wm, wc):
    """Weighted mean and covariance of sigma points; ``wm`` must sum to one."""
    cdef double[:, ::1] pv = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[::1] wmv = np.ascontiguousarray(wm, dtype=np.float64)
    cdef double[::1] wcv = np.ascontiguousarray(wc, dtype=np.float64)
    cdef Py_ssize_t m = pv.shape[0]
    cdef Py_ssize_t n = pv.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cov = np.zeros((n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dev = np.empty(n)
    cdef double[::1] mnv = mean
    cdef double[::1] dv = dev
    cdef double[:, ::1] cv = cov
    cdef Py_ssize_t p, i, j
    cdef double w
    with nogil:
        # offsets from the centre point: the UKF centre weight is huge and negative
        for i in range(n):
            mnv[i] = pv[0, i]
        for p in range(1, m):
            for i in range(n):
                mnv[i] += wmv[p] * (pv[p, i] - pv[0, i])
        for p in range(m):
            w = wcv[p]
            for i in range(n):
                dv[i] = pv[p, i] - mnv[i]
            for i in range(n):
                for j in range(i, n):
                    cv[i, j] += w * dv[i] * dv[j]
        for i in range(n):
            for j in range(i):
                cv[i, j] = cv[j, i]
    return mean, cov


def kf_update(z, p, mu_obs, sigma2, bint paper_gain):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] ov = np.ascontiguousarray(mu_obs, dtype=np.float64)
    cdef double[::1] sv = np.ascontiguousarray(sigma2, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0]
    cdef Py_ssize_t nl = ov.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.empty((nl, nl))
    cdef double[:, ::1] s_v = s
    for i in range(nl):
        for j in range(nl):
            s_v[i, j] = 0.5 * (pv[i, j] + pv[j, i])
        s_v[i, i] += sv[i]
    cdef double[:, ::1] sinv = spd_inverse(s)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gain = np.zeros((n, nl))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gs = np.zeros((n, nl))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z_new = np.array(zv, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] p_new = np.array(pv, dtype=np.float64)
    cdef double[:, ::1] gv = gain
    cdef double[:, ::1] gsv = gs
    cdef double[::1] znv = z_new
    cdef double[:, ::1] pnv = p_new
    with nogil:
        for i in range(n):
            for j in range(nl):
                acc = 0.0
                if paper_gain:
                    if i < nl:
                        for k in range(nl):
                            acc += pv[i, k] * sinv[k, j]
                    else:
                        acc = sinv[i - nl, j]
                else:
                    for k in range(nl):
                        acc += pv[i, k] * sinv[k, j]
                gv[i, j] = acc
        for i in range(n):
            acc = 0.0
            for j in range(nl):
                acc += gv[i, j] * (ov[j] - zv[j])
            znv[i] += acc
        # gs = gain @ s ; p_new -= gs @ gain^T, using the unsymmetrized s
        for i in range(n):
            for j in range(nl):
                acc = 0.0
                for k in range(nl):
                    acc += gv[i, k] * (pv[k, j] + (sv[k] if k == j else 0.0))
                gsv[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(nl):
                    acc += gsv[i, k] * gv[j, k]
                pnv[i, j] -= acc
    return z_new, p_new


def kmeans_assign(points, centroids):
    cdef double[:, ::1] xv = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] cv = np.ascontiguousarray(centroids, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t c = cv.shape[0]
    cdef Py_ssize_t d = xv.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best = np.empty(n)
    cdef cnp.int64_t[::1] lv = labels
    cdef double[::1] bv = best
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    with nogil:
        for i in range(n):
            bv[i] = 1e308
            lv[i] = 0
            for j in range(c):
                acc = 0.0
                for k in range(d):
                    t = xv[i, k] - cv[j, k]
                    acc += t * t
                if acc < bv[i]:
                    bv[i] = acc
                    lv[i] = j
    return labels, best


def flag_runs(mask, Py_ssize_t min_run):
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t n = m.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] mv = m
    cdef cnp.uint8_t[::1] ov = out
    cdef Py_ssize_t i, j, start = -1
    with nogil:
        for i in range(n + 1):
            if i < n and mv[i]:
                if start < 0:
                    start = i
            elif start >= 0:
                if i - start >= min_run:
                    for j in range(start, i):
                        ov[j] = 1
                start = -1
    return out.astype(bool)
