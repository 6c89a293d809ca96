# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Goursat kernels; drop-in replacement for ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

LINEAR = 0
RBF = 1
FIRST_ORDER = 0
SECOND_ORDER = 1

cdef double OVERFLOW = 1e300


cdef inline double _static(const double[:, ::1] x, Py_ssize_t a,
                           const double[:, ::1] y, Py_ssize_t b,
                           int kind, double inv2s2) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0, diff
    if kind == 0:
        for k in range(x.shape[1]):
            acc += x[a, k] * y[b, k]
        return acc
    for k in range(x.shape[1]):
        diff = x[a, k] - y[b, k]
        acc += diff * diff
    return exp(-acc * inv2s2)


cdef double _solve_pair(const double[:, ::1] x, const double[:, ::1] y,
                        int kind, double inv2s2, int scheme, Py_ssize_t stride,
                        double* g0, double* g1, double* u0, double* u1,
                        double* diag) noexcept nogil:
    """Rolling-row sweep for one pair; fills ``diag`` when stride > 0."""
    cdef Py_ssize_t P = x.shape[0], Q = y.shape[0]
    cdef Py_ssize_t a, b
    cdef double d, d2, *tmp
    for b in range(Q):
        g0[b] = _static(x, 0, y, b, kind, inv2s2)
        u0[b] = 1.0
    if stride > 0:
        diag[0] = 1.0
    for a in range(P - 1):
        for b in range(Q):
            g1[b] = _static(x, a + 1, y, b, kind, inv2s2)
        u1[0] = 1.0
        for b in range(Q - 1):
            d = g1[b + 1] - g1[b] - g0[b + 1] + g0[b]
            if scheme == 1:
                d2 = d * d / 12.0
                u1[b + 1] = (u1[b] + u0[b + 1]) * (1.0 + 0.5 * d + d2) - u0[b] * (1.0 - d2)
            else:
                u1[b + 1] = u1[b] + u0[b + 1] + u0[b] * (d - 1.0)
        if stride > 0 and (a + 1) % stride == 0:
            diag[(a + 1) // stride] = u1[a + 1]
        tmp = g0; g0 = g1; g1 = tmp
        tmp = u0; u0 = u1; u1 = tmp
    return u0[Q - 1]


def goursat_pairs(X, Y, int kind, double sigma, int scheme, Py_ssize_t stride, bint symmetric):
    """Signature-kernel values for every pair (X[i], Y[j]); see ``_fallback``."""
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, :, ::1] yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], m = yv.shape[0]
    cdef Py_ssize_t Q = yv.shape[1]
    if stride > 0 and xv.shape[1] != Q:
        raise ValueError("diagonal sampling needs equal grid lengths")
    cdef Py_ssize_t width = (xv.shape[1] - 1) // stride + 1 if stride > 0 else 1
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma) if kind == 1 else 0.0
    out_np = np.empty((n, m, width))
    cdef double[:, :, ::1] out = out_np
    cdef double* buf = <double*> malloc(4 * Q * sizeof(double))
    cdef double* diag = <double*> malloc(width * sizeof(double))
    cdef Py_ssize_t i, j, j0, k
    cdef double val
    cdef bint bad = False
    if buf == NULL or diag == NULL:
        free(buf); free(diag)
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                j0 = i if symmetric else 0
                for j in range(j0, m):
                    val = _solve_pair(xv[i], yv[j], kind, inv2s2, scheme, stride,
                                      buf, buf + Q, buf + 2 * Q, buf + 3 * Q, diag)
                    if not isfinite(val) or fabs(val) > OVERFLOW:
                        bad = True
                    if stride > 0:
                        for k in range(width):
                            out[i, j, k] = diag[k]
                            if symmetric:
                                out[j, i, k] = diag[k]
                    else:
                        out[i, j, 0] = val
                        if symmetric:
                            out[j, i, 0] = val
    finally:
        free(buf)
        free(diag)
    if bad:
        from .errors import NumericalOverflow
        raise NumericalOverflow("signature kernel PDE solution exceeded 1e300")
    return out_np if stride > 0 else out_np[:, :, 0]


def goursat_increments(delta, int scheme):
    """Terminal values for a batch of precomputed increment grids (B, P, Q)."""
    cdef const double[:, :, ::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t nb = dv.shape[0], P = dv.shape[1], Q = dv.shape[2]
    out_np = np.empty(nb)
    cdef double[::1] out = out_np
    cdef double* buf = <double*> malloc(2 * (Q + 1) * sizeof(double))
    cdef double *u0, *u1, *tmp
    cdef Py_ssize_t k, a, b
    cdef double d, d2
    cdef bint bad = False
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for k in range(nb):
                u0 = buf
                u1 = buf + Q + 1
                for b in range(Q + 1):
                    u0[b] = 1.0
                for a in range(P):
                    u1[0] = 1.0
                    for b in range(Q):
                        d = dv[k, a, b]
                        if scheme == 1:
                            d2 = d * d / 12.0
                            u1[b + 1] = (u1[b] + u0[b + 1]) * (1.0 + 0.5 * d + d2) - u0[b] * (1.0 - d2)
                        else:
                            u1[b + 1] = u1[b] + u0[b + 1] + u0[b] * (d - 1.0)
                    tmp = u0; u0 = u1; u1 = tmp
                out[k] = u0[Q]
                if not isfinite(out[k]) or fabs(out[k]) > OVERFLOW:
                    bad = True
    finally:
        free(buf)
    if bad:
        from .errors import NumericalOverflow
        raise NumericalOverflow("signature kernel PDE solution exceeded 1e300")
    return out_np
