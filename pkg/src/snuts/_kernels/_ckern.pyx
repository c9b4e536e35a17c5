# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels: sparse triangular solves, up-looking
Cholesky and symmetric matvec over lower-triangle CSC storage."""

from libc.math cimport sqrt, isfinite

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t I
ctypedef cnp.float64_t F


def lsolve(I[::1] Lp, I[::1] Li, F[::1] Lx, b):
    cdef cnp.ndarray[F, ndim=1] out = np.array(b, dtype=np.float64)
    cdef F[::1] x = out
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j
    cdef I p
    cdef F xj
    for j in range(n):
        xj = x[j] / Lx[Lp[j]]
        x[j] = xj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    return out


def ltsolve(I[::1] Lp, I[::1] Li, F[::1] Lx, b):
    cdef cnp.ndarray[F, ndim=1] out = np.array(b, dtype=np.float64)
    cdef F[::1] x = out
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t j
    cdef I p
    cdef F s
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]
    return out


def ltmul(I[::1] Lp, I[::1] Li, F[::1] Lx, F[::1] v):
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef cnp.ndarray[F, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef F[::1] y = out
    cdef Py_ssize_t j
    cdef I p
    cdef F s
    for j in range(n):
        s = 0.0
        for p in range(Lp[j], Lp[j + 1]):
            s += Lx[p] * v[Li[p]]
        y[j] = s
    return out


def symm_matvec(I[::1] Ap, I[::1] Ai, F[::1] Ax, F[::1] v):
    cdef Py_ssize_t n = Ap.shape[0] - 1
    cdef cnp.ndarray[F, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef F[::1] y = out
    cdef Py_ssize_t j
    cdef I p, i
    cdef F s, vj, a
    for j in range(n):
        vj = v[j]
        s = Ax[Ap[j]] * vj
        for p in range(Ap[j] + 1, Ap[j + 1]):
            i = Ai[p]
            a = Ax[p]
            y[i] += a * vj
            s += a * v[i]
        y[j] += s
    return out


def chol_numeric(Py_ssize_t n, I[::1] Up, I[::1] Ui, F[::1] Ux,
                 I[::1] parent, I[::1] Lp, I[::1] Li):
    cdef cnp.ndarray[F, ndim=1] Lx_arr = np.zeros(Lp[n], dtype=np.float64)
    cdef F[::1] Lx = Lx_arr
    cdef cnp.ndarray[I, ndim=1] c_arr = np.asarray(Lp[:n], dtype=np.int64) + 1
    cdef I[::1] c = c_arr
    cdef cnp.ndarray[F, ndim=1] x_arr = np.zeros(n, dtype=np.float64)
    cdef F[::1] x = x_arr
    cdef cnp.ndarray[I, ndim=1] flag_arr = np.full(n, -1, dtype=np.int64)
    cdef I[::1] flag = flag_arr
    cdef cnp.ndarray[I, ndim=1] stack_arr = np.empty(n, dtype=np.int64)
    cdef I[::1] stack = stack_arr
    cdef Py_ssize_t i, top, length, pp
    cdef I p, k, j, h0, h1
    cdef F d, lki
    for i in range(n):
        top = n
        d = 0.0
        flag[i] = i
        for p in range(Up[i], Up[i + 1]):
            k = Ui[p]
            if k == i:
                d = Ux[p]
                continue
            x[k] = Ux[p]
            length = 0
            while flag[k] != i:
                stack[length] = k
                length += 1
                flag[k] = i
                k = parent[k]
            while length > 0:
                length -= 1
                top -= 1
                stack[top] = stack[length]
        for pp in range(top, n):
            j = stack[pp]
            lki = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            h0 = Lp[j] + 1
            h1 = c[j]
            for p in range(h0, h1):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[h1] = lki
            c[j] = h1 + 1
        if d <= 0.0 or not isfinite(d):
            return Lx_arr, i
        Lx[Lp[i]] = sqrt(d)
    return Lx_arr, -1
