# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 propagation of batched linear ODEs ``dY/dt = -A(t) Y``."""

import numpy as np


cdef inline void _apply(const double[:, ::1] A, double[:, ::1] Y, double[:, ::1] out,
                        Py_ssize_t d, Py_ssize_t m) noexcept nogil:
    # out = -A @ Y
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(d):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                acc = acc + A[i, k] * Y[k, j]
            out[i, j] = -acc


def propagate(const double[:, :, :, ::1] A, double h, const double[:, :, ::1] Y0):
    """Integrate ``dY/dt = -A(t) Y`` with classical RK4.

    ``A[b, j]`` holds the coefficient matrix at ``t0 + j h / 2``; ray ``b`` takes
    ``(A.shape[1] - 1) // 2`` steps.  Returns the final ``Y`` for every ray.
    """
    cdef Py_ssize_t B = A.shape[0], S = A.shape[1], d = A.shape[2], m = Y0.shape[2]
    cdef Py_ssize_t K = (S - 1) // 2
    if Y0.shape[0] != B or Y0.shape[1] != d or A.shape[3] != d:
        raise ValueError("shape mismatch between coefficient matrices and initial values")
    result = np.array(Y0, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] out = result
    cdef double[:, ::1] Y = np.empty((d, m))
    cdef double[:, ::1] k1 = np.empty((d, m))
    cdef double[:, ::1] k2 = np.empty((d, m))
    cdef double[:, ::1] k3 = np.empty((d, m))
    cdef double[:, ::1] k4 = np.empty((d, m))
    cdef double[:, ::1] tmp = np.empty((d, m))
    cdef Py_ssize_t b, s, i, j
    cdef double half = 0.5 * h, sixth = h / 6.0
    with nogil:
        for b in range(B):
            for i in range(d):
                for j in range(m):
                    Y[i, j] = out[b, i, j]
            for s in range(K):
                _apply(A[b, 2 * s], Y, k1, d, m)
                for i in range(d):
                    for j in range(m):
                        tmp[i, j] = Y[i, j] + half * k1[i, j]
                _apply(A[b, 2 * s + 1], tmp, k2, d, m)
                for i in range(d):
                    for j in range(m):
                        tmp[i, j] = Y[i, j] + half * k2[i, j]
                _apply(A[b, 2 * s + 1], tmp, k3, d, m)
                for i in range(d):
                    for j in range(m):
                        tmp[i, j] = Y[i, j] + h * k3[i, j]
                _apply(A[b, 2 * s + 2], tmp, k4, d, m)
                for i in range(d):
                    for j in range(m):
                        Y[i, j] = Y[i, j] + sixth * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            for i in range(d):
                for j in range(m):
                    out[b, i, j] = Y[i, j]
    return result
