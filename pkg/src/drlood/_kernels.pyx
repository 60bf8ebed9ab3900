# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_kernels_py``.

Inputs are converted to C-contiguous float64 by ``drlood.kernels`` before
they reach these functions.
"""
import numpy as np
from libc.math cimport sqrt


def implicit_constraint(const double[:, ::1] mu, const double[:, ::1] d,
                        const double[:, ::1] sigma, double epsilon):
    cdef Py_ssize_t n = mu.shape[0], K = mu.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double dot, sd
    out = np.empty((n, K))
    cdef double[:, ::1] c = out
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(K):
                dot = dot + mu[i, j] * d[i, j]
            for j in range(K):
                sd = 0.0
                for l in range(K):
                    sd = sd + sigma[j, l] * d[i, l]
                c[i, j] = mu[i, j] - epsilon * (sd + dot * mu[i, j])
    return out


def implicit_constraint_grad(const double[:, ::1] grad_c, const double[:, ::1] mu,
                             const double[:, ::1] d, double epsilon):
    cdef Py_ssize_t n = mu.shape[0], K = mu.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot_md, dot_mg
    out = np.empty((n, K))
    cdef double[:, ::1] g = out
    with nogil:
        for i in range(n):
            dot_md = 0.0
            dot_mg = 0.0
            for j in range(K):
                dot_md = dot_md + mu[i, j] * d[i, j]
                dot_mg = dot_mg + mu[i, j] * grad_c[i, j]
            for j in range(K):
                g[i, j] = grad_c[i, j] - epsilon * (dot_mg * d[i, j] + dot_md * grad_c[i, j])
    return out


def mc_weighted_sum(const double[::1] mu, const double[:, ::1] chol, const double[::1] d,
                    double epsilon, const double[:, ::1] normals):
    cdef Py_ssize_t n = normals.shape[0], K = mu.shape[0]
    cdef Py_ssize_t i, j, l
    cdef double w, zd
    out = np.zeros(K)
    z_buf = np.empty(K)
    cdef double[::1] acc = out
    cdef double[::1] z = z_buf
    with nogil:
        for i in range(n):
            zd = 0.0
            for j in range(K):
                z[j] = mu[j]
                for l in range(K):
                    z[j] = z[j] + chol[j, l] * normals[i, l]
                zd = zd + z[j] * d[j]
            w = 1.0 - epsilon * zd
            for j in range(K):
                acc[j] = acc[j] + w * z[j]
    return out


cdef double _select(double* a, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    """k-th smallest (0-based) of a[0:n]; reorders a in place."""
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = a[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                tmp = a[i]
                a[i] = a[j]
                a[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            break
    return a[k]


def kth_distance(const double[:, ::1] queries, const double[:, ::1] bank, Py_ssize_t k):
    cdef Py_ssize_t n = queries.shape[0], p = queries.shape[1], m = bank.shape[0]
    cdef Py_ssize_t i, j, l
    cdef double s, diff
    out = np.empty(n)
    buf_arr = np.empty(m)
    cdef double[::1] res = out
    cdef double[::1] buf = buf_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for l in range(p):
                    diff = queries[i, l] - bank[j, l]
                    s = s + diff * diff
                buf[j] = s
            res[i] = sqrt(_select(&buf[0], m, k - 1))
    return out
