# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot numerical kernels.

Same API and semantics as ``_purecore``; see that module for conventions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double SQRT3 = sqrt(3.0)
cdef double SQRT5 = sqrt(5.0)


cdef inline double _h(double d2, int family) nogil:
    cdef double z, t
    if family == 0:
        return exp(-d2)
    z = sqrt(d2)
    if family == 1:
        return exp(-z)
    if family == 2:
        t = SQRT3 * z
        return (1.0 + t) * exp(-t)
    t = SQRT5 * z
    return (1.0 + t + t * t / 3.0) * exp(-t)


cdef inline double _d1f(double d2, int family) nogil:
    # phi(z) with d k / d w_query = (dw / beta) * phi(z)
    cdef double z, t
    if family == 0:
        return -2.0 * exp(-d2)
    z = sqrt(d2)
    if family == 2:
        return -3.0 * exp(-SQRT3 * z)
    t = SQRT5 * z
    return -(5.0 / 3.0) * (1.0 + t) * exp(-t)


cdef inline double _d2zero(double d2, int family, double inv_beta) nogil:
    cdef double z, t
    if family == 0:
        return 2.0 * inv_beta * exp(-d2)
    z = sqrt(d2)
    if family == 2:
        return 3.0 * inv_beta * exp(-SQRT3 * z)
    t = SQRT5 * z
    return (5.0 / 3.0) * inv_beta * (1.0 + t) * exp(-t)


def gram(double[::1] w, double[::1] s, int family):
    cdef Py_ssize_t n = w.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double dw, ds, v
    with nogil:
        for i in range(n):
            o[i, i] = 1.0
            for j in range(i + 1, n):
                dw = w[i] - w[j]
                ds = s[i] - s[j]
                v = _h(dw * dw + ds * ds, family)
                o[i, j] = v
                o[j, i] = v
    return out


def cross(double[::1] qw, double[::1] qs, double[::1] xw, double[::1] xs,
          int family):
    cdef Py_ssize_t nq = qw.shape[0], nx = xw.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nq, nx))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double dw, ds
    with nogil:
        for i in range(nq):
            for j in range(nx):
                dw = qw[i] - xw[j]
                ds = qs[i] - xs[j]
                o[i, j] = _h(dw * dw + ds * ds, family)
    return out


def cross_matmul(double[::1] qw, double[::1] qs, double[::1] xw,
                 double[::1] xs, int family, mat, bint trans):
    cdef Py_ssize_t nq = qw.shape[0], nx = xw.shape[0]
    cdef double[:, ::1] m = np.ascontiguousarray(np.atleast_2d(np.asarray(mat, dtype=np.float64)))
    cdef Py_ssize_t k = m.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out
    cdef double[:, ::1] o
    cdef Py_ssize_t i, j, c
    cdef double dw, ds, v
    if trans:
        if m.shape[0] != nq:
            raise ValueError("matrix rows do not match query count")
        out = np.zeros((nx, k))
        o = out
        with nogil:
            for i in range(nq):
                for j in range(nx):
                    dw = qw[i] - xw[j]
                    ds = qs[i] - xs[j]
                    v = _h(dw * dw + ds * ds, family)
                    for c in range(k):
                        o[j, c] += v * m[i, c]
    else:
        if m.shape[0] != nx:
            raise ValueError("matrix rows do not match data count")
        out = np.zeros((nq, k))
        o = out
        with nogil:
            for i in range(nq):
                for j in range(nx):
                    dw = qw[i] - xw[j]
                    ds = qs[i] - xs[j]
                    v = _h(dw * dw + ds * ds, family)
                    for c in range(k):
                        o[i, c] += v * m[j, c]
    return out


def gram_sum(double[::1] w, double[::1] s, int family):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t i, j
    cdef double dw, ds, total = 0.0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dw = w[i] - w[j]
                ds = s[i] - s[j]
                total += _h(dw * dw + ds * ds, family)
    return 2.0 * total + <double>n


def d2zero_gram_sum(double[::1] s, int family, double inv_beta):
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i, j
    cdef double ds, total = 0.0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                ds = s[i] - s[j]
                total += _d2zero(ds * ds, family, inv_beta)
    return 2.0 * total + <double>n * _d2zero(0.0, family, inv_beta)


def d1_cross(double[::1] qw, double[::1] qs, double[::1] xw, double[::1] xs,
             int family, double inv_sqrt_beta):
    cdef Py_ssize_t nq = qw.shape[0], nx = xw.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nq, nx))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double dw, ds
    with nogil:
        for i in range(nq):
            for j in range(nx):
                dw = qw[i] - xw[j]
                ds = qs[i] - xs[j]
                o[i, j] = dw * inv_sqrt_beta * _d1f(dw * dw + ds * ds, family)
    return out


cdef int _chol_solve(double* b, double* rhs, double* a, Py_ssize_t ell) nogil:
    """In-place Cholesky of b (ell x ell, row-major), then solve into a."""
    cdef Py_ssize_t i, j, p
    cdef double acc
    for j in range(ell):
        acc = b[j * ell + j]
        for p in range(j):
            acc -= b[j * ell + p] * b[j * ell + p]
        if acc <= 0.0:
            return -1
        b[j * ell + j] = sqrt(acc)
        for i in range(j + 1, ell):
            acc = b[i * ell + j]
            for p in range(j):
                acc -= b[i * ell + p] * b[j * ell + p]
            b[i * ell + j] = acc / b[j * ell + j]
    for i in range(ell):
        acc = rhs[i]
        for p in range(i):
            acc -= b[i * ell + p] * a[p]
        a[i] = acc / b[i * ell + i]
    for i in range(ell - 1, -1, -1):
        acc = a[i]
        for p in range(i + 1, ell):
            acc -= b[p * ell + i] * a[p]
        a[i] = acc / b[i * ell + i]
    return 0


def nn_solve(double[::1] xw, double[::1] xs, long[:, ::1] nbrs,
             double[::1] qw, double[::1] qs, double r2, int family,
             double jitter=0.0):
    cdef Py_ssize_t nq = nbrs.shape[0], ell = nbrs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] weights = np.empty((nq, ell))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] adh = np.empty(nq)
    cdef double[:, ::1] wv = weights
    cdef double[::1] av = adh
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bbuf = np.empty((ell, ell))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hbuf = np.empty(ell)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] abuf = np.empty(ell)
    cdef double[:, ::1] b = bbuf
    cdef double[::1] h = hbuf
    cdef double[::1] a = abuf
    cdef Py_ssize_t q, i, j
    cdef long gi, gj
    cdef double dw, ds, acc
    cdef int bad = 0
    with nogil:
        for q in range(nq):
            for i in range(ell):
                gi = nbrs[q, i]
                b[i, i] = r2 + 1.0 + jitter
                for j in range(i + 1, ell):
                    gj = nbrs[q, j]
                    dw = xw[gi] - xw[gj]
                    ds = xs[gi] - xs[gj]
                    acc = r2 * _h(dw * dw + ds * ds, family)
                    b[i, j] = acc
                    b[j, i] = acc
                dw = qw[q] - xw[gi]
                ds = qs[q] - xs[gi]
                h[i] = _h(dw * dw + ds * ds, family)
            if _chol_solve(&b[0, 0], &h[0], &a[0], ell) != 0:
                bad = 1
                break
            acc = 0.0
            for i in range(ell):
                wv[q, i] = r2 * a[i]
                acc += r2 * a[i] * h[i]
            av[q] = acc
    if bad:
        raise np.linalg.LinAlgError("neighbor Gram matrix not positive definite")
    return weights, adh


def nn_solve_d1(double[::1] xw, double[::1] xs, long[:, ::1] nbrs,
                double[::1] qw, double[::1] qs, double r2, int family,
                double inv_sqrt_beta, double jitter=0.0):
    cdef Py_ssize_t nq = nbrs.shape[0], ell = nbrs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] weights = np.empty((nq, ell))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] quad = np.empty(nq)
    cdef double[:, ::1] wv = weights
    cdef double[::1] qv = quad
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bbuf = np.empty((ell, ell))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cbuf = np.empty(ell)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] abuf = np.empty(ell)
    cdef double[:, ::1] b = bbuf
    cdef double[::1] c = cbuf
    cdef double[::1] a = abuf
    cdef Py_ssize_t q, i, j
    cdef long gi, gj
    cdef double dw, ds, acc
    cdef int bad = 0
    with nogil:
        for q in range(nq):
            for i in range(ell):
                gi = nbrs[q, i]
                b[i, i] = r2 + 1.0 + jitter
                for j in range(i + 1, ell):
                    gj = nbrs[q, j]
                    dw = xw[gi] - xw[gj]
                    ds = xs[gi] - xs[gj]
                    acc = r2 * _h(dw * dw + ds * ds, family)
                    b[i, j] = acc
                    b[j, i] = acc
                dw = qw[q] - xw[gi]
                ds = qs[q] - xs[gi]
                c[i] = dw * inv_sqrt_beta * _d1f(dw * dw + ds * ds, family)
            if _chol_solve(&b[0, 0], &c[0], &a[0], ell) != 0:
                bad = 1
                break
            acc = 0.0
            for i in range(ell):
                wv[q, i] = r2 * a[i]
                acc += r2 * a[i] * c[i]
            qv[q] = acc
    if bad:
        raise np.linalg.LinAlgError("neighbor Gram matrix not positive definite")
    return weights, quad
