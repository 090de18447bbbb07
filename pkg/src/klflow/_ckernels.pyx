# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernel sums. Mirrors ``klflow._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow

cnp.import_array()


cdef inline void _profile(double u, int family, double p1, double p2,
                          double* phi, double* d1, double* d2, double* d3) noexcept nogil:
    cdef double a, q, f
    if family == 0:
        a = 1.0 / (2.0 * p1 * p1)
        f = exp(-a * u)
        phi[0] = f
        d1[0] = -a * f
        d2[0] = a * a * f
        d3[0] = -a * a * a * f
    else:
        q = p1 * p1 + u
        f = pow(q, -p2)
        phi[0] = f
        d1[0] = -p2 * f / q
        d2[0] = p2 * (p2 + 1.0) * f / (q * q)
        d3[0] = -p2 * (p2 + 1.0) * (p2 + 2.0) * f / (q * q * q)


def gram(const double[:, ::1] x, const double[:, ::1] y, int family, double p1, double p2):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double u, t, phi, d1, d2, d3
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                u = 0.0
                for k in range(dim):
                    t = x[i, k] - y[j, k]
                    u = u + t * t
                _profile(u, family, p1, p2, &phi, &d1, &d2, &d3)
                o[i, j] = phi
    return out


def grad2_sum(const double[:, ::1] src, const double[::1] w, const double[:, ::1] dst,
              int family, double p1, double p2):
    cdef Py_ssize_t n = dst.shape[0], m = src.shape[0], dim = dst.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double u, t, c, phi, d1, d2, d3
    out = np.zeros((n, dim))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                u = 0.0
                for k in range(dim):
                    t = src[j, k] - dst[i, k]
                    u = u + t * t
                _profile(u, family, p1, p2, &phi, &d1, &d2, &d3)
                c = -2.0 * d1 * w[j]
                for k in range(dim):
                    o[i, k] = o[i, k] + c * (src[j, k] - dst[i, k])
    return out


def stein_gram(const double[:, ::1] x, const double[:, ::1] sx,
               const double[:, ::1] y, const double[:, ::1] sy,
               int family, double p1, double p2):
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double u, t, cross, dot, phi, d1, d2, d3
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                u = 0.0
                cross = 0.0
                dot = 0.0
                for k in range(dim):
                    t = x[i, k] - y[j, k]
                    u = u + t * t
                    cross = cross + t * (sy[j, k] - sx[i, k])
                    dot = dot + sx[i, k] * sy[j, k]
                _profile(u, family, p1, p2, &phi, &d1, &d2, &d3)
                o[i, j] = (-2.0 * dim * d1 - 4.0 * d2 * u
                           + 2.0 * d1 * cross + phi * dot)
    return out


def stein_grad2_sum(const double[:, ::1] x, const double[::1] w, const double[:, ::1] s,
                    const double[:, :, ::1] jac, int family, double p1, double p2):
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t i, j, a, b
    cdef double u, t, rd, dot, coef, phi, d1, d2, d3, wj
    out = np.zeros((n, dim))
    v_buf = np.zeros(dim)
    cdef double[:, ::1] o = out
    cdef double[::1] v = v_buf
    with nogil:
        for i in range(n):
            for a in range(dim):
                v[a] = 0.0
            for j in range(n):
                wj = w[j]
                u = 0.0
                rd = 0.0
                dot = 0.0
                for a in range(dim):
                    # r = x_j - x_i (first argument minus second)
                    t = x[j, a] - x[i, a]
                    u = u + t * t
                    rd = rd + t * (s[i, a] - s[j, a])
                    dot = dot + s[j, a] * s[i, a]
                _profile(u, family, p1, p2, &phi, &d1, &d2, &d3)
                coef = (4.0 * (dim + 2) * d2 + 8.0 * d3 * u
                        - 4.0 * d2 * rd - 2.0 * d1 * dot) * wj
                for a in range(dim):
                    t = x[j, a] - x[i, a]
                    o[i, a] = o[i, a] + coef * t + 2.0 * d1 * wj * (s[j, a] - s[i, a])
                    v[a] = v[a] + 2.0 * d1 * wj * t + phi * wj * s[j, a]
            for a in range(dim):
                for b in range(dim):
                    o[i, a] = o[i, a] + jac[i, b, a] * v[b]
    return out
