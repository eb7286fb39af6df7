# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in ``_fallback.py`` with the same
signature and semantics; ``_backend`` picks one at import time.
"""
from libc.math cimport exp, INFINITY

import numpy as np

# exp(-s*s) < 1e-307 beyond this; skipping keeps the scan cheap for narrow bumps
cdef double GAUSS_CUTOFF_SQ = 707.0

cdef inline double _gauss(double s) nogil:
    cdef double s2 = s * s
    if s2 > GAUSS_CUTOFF_SQ:
        return 0.0
    return exp(-s2)

cdef inline double _sigmoid(double s) nogil:
    # 1 / (1 + e^s), evaluated without overflow
    cdef double e
    if s > 0.0:
        e = exp(-s)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(s))


def scan_candidates(const double[:, ::1] w, const double[::1] b,
                    const double[:, ::1] nodes, const double[::1] resid,
                    double offset, double threshold, double cell_weight,
                    int kind):
    """Scan candidates in order for ``cell_weight * <resid, g_k> - offset < threshold``.

    Returns ``(first, first_value, best, best_value)``; ``first`` is -1 when
    no candidate satisfies the condition.
    """
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t d = w.shape[1]
    cdef Py_ssize_t N = nodes.shape[0]
    cdef Py_ssize_t k, j, a
    cdef double s, acc, val
    cdef Py_ssize_t best = -1
    cdef Py_ssize_t first = -1
    cdef double best_val = INFINITY
    cdef double first_val = INFINITY
    with nogil:
        for k in range(K):
            acc = 0.0
            for j in range(N):
                s = b[k]
                for a in range(d):
                    s = s + w[k, a] * nodes[j, a]
                if kind == 0:
                    acc = acc + resid[j] * _gauss(s)
                else:
                    acc = acc + resid[j] * _sigmoid(s)
            val = cell_weight * acc - offset
            if val < best_val:
                best_val = val
                best = k
            if val < threshold:
                first = k
                first_val = val
                break
    return first, first_val, best, best_val


def tabulate_many(const double[:, ::1] w, const double[::1] b,
                  const double[:, ::1] nodes, int kind):
    """Matrix ``G[k, j] = g_k(nodes[j])``."""
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t d = w.shape[1]
    cdef Py_ssize_t N = nodes.shape[0]
    cdef Py_ssize_t k, j, a
    cdef double s
    out = np.empty((K, N), dtype=np.float64)
    cdef double[:, ::1] G = out
    with nogil:
        for k in range(K):
            for j in range(N):
                s = b[k]
                for a in range(d):
                    s = s + w[k, a] * nodes[j, a]
                if kind == 0:
                    G[k, j] = _gauss(s)
                else:
                    G[k, j] = _sigmoid(s)
    return out


def mlp_forward(const double[:, ::1] x, const double[:, ::1] w,
                const double[::1] b, const double[::1] c):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, k, a
    cdef double s, acc
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            acc = 0.0
            for k in range(n):
                s = b[k]
                for a in range(d):
                    s = s + w[k, a] * x[i, a]
                acc = acc + c[k] * _sigmoid(s)
            o[i] = acc
    return out


def mlp_loss_grad(const double[:, ::1] x, const double[::1] y,
                  const double[:, ::1] w, const double[::1] b,
                  const double[::1] c):
    """Mean squared error and its gradient with respect to (w, b, c)."""
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, k, a
    cdef double s, out, r, ds, loss = 0.0
    cdef double inv_m = 1.0 / m
    gw_arr = np.zeros((n, d), dtype=np.float64)
    gb_arr = np.zeros(n, dtype=np.float64)
    gc_arr = np.zeros(n, dtype=np.float64)
    sig_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[::1] gc = gc_arr
    cdef double[::1] sig = sig_arr
    with nogil:
        for i in range(m):
            out = 0.0
            for k in range(n):
                s = b[k]
                for a in range(d):
                    s = s + w[k, a] * x[i, a]
                sig[k] = _sigmoid(s)
                out = out + c[k] * sig[k]
            r = out - y[i]
            loss = loss + r * r
            r = 2.0 * r * inv_m
            for k in range(n):
                gc[k] = gc[k] + r * sig[k]
                # d/ds 1/(1+e^s) = -sig (1 - sig)
                ds = -r * c[k] * sig[k] * (1.0 - sig[k])
                gb[k] = gb[k] + ds
                for a in range(d):
                    gw[k, a] = gw[k, a] + ds * x[i, a]
    return loss * inv_m, gw_arr, gb_arr, gc_arr
