# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Gaussian kernel-mixture evaluation and weighted
empirical-CDF sums for the step-up scans.

Mirrors ``rhobh._kernels_py`` exactly; centers must be sorted ascending so
that terms beyond the float64 underflow radius can be skipped.
"""

import numpy as np

from libc.math cimport exp

cdef double INV_SQRT_2PI = 0.3989422804014327
# exp(-0.5 * 38.6**2) underflows to zero in double precision
cdef double CUTOFF = 38.6


cdef inline Py_ssize_t _lower(const double[::1] a, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper(const double[::1] a, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def mixture_rows(y, centers, coef, double h):
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(coef, dtype=np.float64)
    cdef Py_ssize_t T = yv.shape[0], B = yv.shape[1]
    out = np.empty((T, B))
    cdef double[:, ::1] ov = out
    cdef double inv_h = 1.0 / h, norm = INV_SQRT_2PI / h, reach = CUTOFF * h
    cdef Py_ssize_t t, b, j, lo, hi
    cdef double v, d, acc
    with nogil:
        for t in range(T):
            for b in range(B):
                v = yv[t, b]
                lo = _lower(cv, v - reach)
                hi = _upper(cv, v + reach)
                acc = 0.0
                for j in range(lo, hi):
                    d = (v - cv[j]) * inv_h
                    acc = acc + wv[t, j] * exp(-0.5 * d * d)
                ov[t, b] = acc * norm
    return out


def mixture_points(y, centers, weights, double h):
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef const double[::1] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t N = yv.shape[0]
    out = np.empty(N)
    cdef double[::1] ov = out
    cdef double inv_h = 1.0 / h, norm = INV_SQRT_2PI / h, reach = CUTOFF * h
    cdef Py_ssize_t n, j, lo, hi
    cdef double v, d, acc
    with nogil:
        for n in range(N):
            v = yv[n]
            lo = _lower(cv, v - reach)
            hi = _upper(cv, v + reach)
            acc = 0.0
            for j in range(lo, hi):
                d = (v - cv[j]) * inv_h
                acc = acc + wv[j] * exp(-0.5 * d * d)
            ov[n] = acc * norm
    return out


def ecdf_weighted_sum(samples, scale, coef, t_sorted, double offset, double denom):
    cdef const double[:, ::1] sv = np.ascontiguousarray(samples, dtype=np.float64)
    cdef const double[::1] scv = np.ascontiguousarray(scale, dtype=np.float64)
    cdef const double[::1] cov = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(t_sorted, dtype=np.float64)
    cdef Py_ssize_t T = sv.shape[0], B = sv.shape[1], J = tv.shape[0]
    out = np.zeros(J)
    cdef double[::1] ov = out
    cdef Py_ssize_t t, j, p
    cdef double v
    with nogil:
        for t in range(T):
            p = 0
            for j in range(J):
                v = scv[t] * tv[j]
                while p < B and sv[t, p] <= v:
                    p += 1
                ov[j] = ov[j] + cov[t] * (p + offset) / denom
    return out
