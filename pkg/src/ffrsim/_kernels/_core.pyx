# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the sequential hot loops (see _pure.py for semantics)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rainflow_halves(double[::1] extrema):
    cdef Py_ssize_t n = extrema.shape[0]
    cdef cnp.ndarray[double, ndim=1] stack = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] depths = np.empty(2 * n + 2, dtype=np.float64)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] dirs = np.empty(2 * n + 2, dtype=np.int8)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] full = np.empty(2 * n + 2, dtype=np.int8)
    cdef double[::1] st = stack
    cdef double[::1] dp = depths
    cdef cnp.int8_t[::1] dr = dirs
    cdef cnp.int8_t[::1] fl = full
    cdef Py_ssize_t top = 0, out = 0, k, m
    cdef double r1, r2, r3, lo, hi
    cdef int first_dir

    for k in range(n):
        st[top] = extrema[k]
        top += 1
        while top >= 4:
            r1 = abs(st[top - 3] - st[top - 4])
            r2 = abs(st[top - 2] - st[top - 3])
            r3 = abs(st[top - 1] - st[top - 2])
            if r2 <= r1 and r2 <= r3:
                lo = st[top - 3]
                hi = st[top - 2]
                if r2 > 0.0:
                    first_dir = 1 if hi < lo else 0
                    dp[out] = r2
                    dr[out] = first_dir
                    fl[out] = 1
                    out += 1
                    dp[out] = r2
                    dr[out] = 1 - first_dir
                    fl[out] = 1
                    out += 1
                st[top - 3] = st[top - 1]
                top -= 2
            else:
                break
    for m in range(top - 1):
        r1 = abs(st[m + 1] - st[m])
        if r1 > 0.0:
            dp[out] = r1
            dr[out] = 1 if st[m + 1] < st[m] else 0
            fl[out] = 0
            out += 1
    return depths[:out].copy(), dirs[:out].copy(), full[:out].copy()


def css_residuals(double[::1] y, double[::1] ar, double[::1] ma, double intercept):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t p = ar.shape[0]
    cdef Py_ssize_t q = ma.shape[0]
    cdef cnp.ndarray[double, ndim=1] e_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] e = e_arr
    cdef Py_ssize_t t, i, j, k
    cdef double pred
    for t in range(n):
        pred = intercept
        for i in range(p):
            k = t - 1 - i
            if k >= 0:
                pred += ar[i] * y[k]
        for j in range(q):
            k = t - 1 - j
            if k >= 0:
                pred += ma[j] * e[k]
        e[t] = y[t] - pred
    return e_arr


def reflect_walk(double[::1] noise, double mean_reversion, double x0,
                 long neutral_window, double correction, double momentum):
    cdef Py_ssize_t n = noise.shape[0]
    cdef cnp.ndarray[double, ndim=1] out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double prev = x0
    cdef double vel = 0.0
    cdef double window_sum = 0.0
    cdef double x
    cdef Py_ssize_t t, count
    for t in range(n):
        vel = momentum * vel - mean_reversion * prev + noise[t]
        x = prev + vel
        if neutral_window > 0:
            count = t if t < neutral_window else neutral_window
            if count > 0:
                x -= correction * (window_sum / count)
        while x > 1.0 or x < -1.0:
            if x > 1.0:
                x = 2.0 - x
            else:
                x = -2.0 - x
        out[t] = x
        if neutral_window > 0:
            window_sum += x
            if t >= neutral_window:
                window_sum -= out[t - neutral_window]
        prev = x
    return out_arr
