# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Mirrors :mod:`gradnorm._fallback` function for function."""

import numpy as np

from libc.math cimport cos, log, sin, sqrt
from libc.stdint cimport uint64_t

cdef extern from "_gemm.h":
    int gn_gemm(const double *a, long ars, long acs, const double *b, long brs, long bcs,
                double *c, long m, long k, long n) nogil

NAME = "compiled"

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t seed, uint64_t index) noexcept nogil:
    return (<double>(_mix(seed + (index + 1) * GAMMA) >> 11) + 0.5) * INV_2_53


def _product(a, b, bint trans_a=False, bint trans_b=False):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef long ars = av.shape[1], acs = 1, brs = bv.shape[1], bcs = 1
    cdef long m = av.shape[0], k = av.shape[1], n = bv.shape[1]
    if trans_a:
        m, k = av.shape[1], av.shape[0]
        ars, acs = 1, av.shape[1]
    if trans_b:
        n = bv.shape[0]
        brs, bcs = 1, bv.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    if m == 0 or n == 0:
        return out
    if k == 0:
        out.fill(0.0)
        return out
    cdef double[:, ::1] cv = out
    cdef int status
    with nogil:
        status = gn_gemm(&av[0, 0], ars, acs, &bv[0, 0], brs, bcs, &cv[0, 0], m, k, n)
    if status != 0:
        raise MemoryError("gemm workspace allocation failed")
    return out


def matmul(a, b):
    return _product(a, b)


def matmul_tn(a, b):
    """``a.T @ b``."""
    return _product(a, b, trans_a=True)


def matmul_nt(a, b):
    """``a @ b.T``."""
    return _product(a, b, trans_b=True)


def splitmix_uint64(uint64_t seed, uint64_t counter, Py_ssize_t n):
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = _mix(seed + (counter + <uint64_t>i + 1) * GAMMA)
    return out


def uniform(uint64_t seed, uint64_t counter, Py_ssize_t n):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = _unit(seed, counter + <uint64_t>i)
    return out


def gaussian(uint64_t seed, uint64_t counter, Py_ssize_t n):
    """Box-Muller normals; consumes ``2 * ceil(n / 2)`` stream positions."""
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t pairs = (n + 1) // 2, j
    cdef double r, theta, c, s
    cdef uint64_t idx
    with nogil:
        for j in range(pairs):
            idx = counter + 2 * <uint64_t>j
            r = sqrt(-2.0 * log(_unit(seed, idx)))
            theta = TWO_PI * _unit(seed, idx + 1)
            # computed together so the compiler can emit a single sincos
            c = cos(theta)
            s = sin(theta)
            ov[2 * j] = r * c
            if 2 * j + 1 < n:
                ov[2 * j + 1] = r * s
    return out


def relu(z):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(z, dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(zv.shape[0]):
            for j in range(zv.shape[1]):
                ov[i, j] = zv[i, j] if zv[i, j] > 0.0 else 0.0
    return out


def relu_backward(upstream, z):
    """``upstream`` masked to where ``z > 0``; zero elsewhere."""
    cdef double[:, ::1] uv = np.ascontiguousarray(upstream, dtype=np.float64)
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty((uv.shape[0], uv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(zv.shape[0]):
            for j in range(zv.shape[1]):
                ov[i, j] = uv[i, j] if zv[i, j] > 0.0 else 0.0
    return out


def add_bias(z, bias):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    out = np.empty((zv.shape[0], zv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(zv.shape[0]):
            for j in range(zv.shape[1]):
                ov[i, j] = zv[i, j] + bv[j]
    return out


def sum_squares(a):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    cdef double s = 0.0
    cdef Py_ssize_t i
    with nogil:
        for i in range(av.shape[0]):
            s += av[i] * av[i]
    return s


def adam_step(param, grad, m, v, double lr, double beta1, double beta2, double bc1, double bc2, double eps):
    """Fused in-place Adam update of one parameter array."""
    if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_step updates in place and needs contiguous arrays")
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi
    if g.shape[0] != n or mv.shape[0] != n or vv.shape[0] != n:
        raise ValueError("adam_step operands differ in size")
    with nogil:
        for i in range(n):
            gi = g[i]
            mv[i] = beta1 * mv[i] + (1.0 - beta1) * gi
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * (gi * gi)
            p[i] -= lr * (mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps)
