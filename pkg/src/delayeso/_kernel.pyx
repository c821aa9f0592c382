# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-step integrator for linear systems with grid-exact delays.

Integrates

    z'(t) = M0 z(t) + M1 z(t - m1*dt) + M2 z(t - m2*dt) + F(t) [+ Gn * rho * sgn(Y(t) - Cs z(t))]

on a uniform grid. Delayed samples are read from the already computed part of
the trajectory; history before t = 0 is the constant z0. With RK4 the first
and last stage read the grid samples ``k - m`` and ``k - m + 1``; the two
midpoint stages use the cubic Hermite value between them, built from the
stored grid derivatives. ``F`` and ``Y`` are supplied at the three RK4 stage
times of every step: ``[k, 0]`` at t_k, ``[k, 1]`` at t_k + dt/2, ``[k, 2]`` at t_{k+1}.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _sgn(double s, double bl) noexcept nogil:
    if bl > 0.0:
        if s >= bl:
            return 1.0
        if s <= -bl:
            return -1.0
        return s / bl
    if s > 0.0:
        return 1.0
    if s < 0.0:
        return -1.0
    return 0.0


cdef void _rhs(const double[:, ::1] M0, const double[::1] delayed, const double[:, :, ::1] F,
               const double[:, ::1] Gn, const double[:, ::1] Cs, const double[:, :, ::1] Y,
               double rho, double bl, bint smo, Py_ssize_t k, Py_ssize_t stage,
               const double* z, double* out, double* inn, Py_ssize_t n, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = delayed[i] + F[k, stage, i]
        for j in range(n):
            acc = acc + M0[i, j] * z[j]
        out[i] = acc
    if smo:
        for i in range(p):
            acc = Y[k, stage, i]
            for j in range(n):
                acc = acc - Cs[i, j] * z[j]
            inn[i] = rho * _sgn(acc, bl)
        for i in range(n):
            acc = 0.0
            for j in range(p):
                acc = acc + Gn[i, j] * inn[j]
            out[i] = out[i] + acc


cdef inline double _hist(const double[:, ::1] Z, const double[:, ::1] dZ, Py_ssize_t a,
                         Py_ssize_t stage, double dt, Py_ssize_t j) noexcept nogil:
    # value of component j of the trajectory at t_a + stage*dt/2 (history before 0 is Z[0])
    if stage == 0:
        return Z[a if a > 0 else 0, j]
    if stage == 2:
        return Z[a + 1 if a + 1 > 0 else 0, j]
    if a < 0:
        return Z[0, j]
    return 0.5 * (Z[a, j] + Z[a + 1, j]) + 0.125 * dt * (dZ[a, j] - dZ[a + 1, j])


cdef void _delayed(const double[:, ::1] M1, const double[:, ::1] M2, const double[:, ::1] Z,
                   const double[:, ::1] dZ, bint use1, bint use2, Py_ssize_t a1, Py_ssize_t a2,
                   Py_ssize_t stage, double dt, double[::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        if use1:
            for j in range(n):
                acc = acc + M1[i, j] * _hist(Z, dZ, a1, stage, dt, j)
        if use2:
            for j in range(n):
                acc = acc + M2[i, j] * _hist(Z, dZ, a2, stage, dt, j)
        out[i] = acc


def integrate(const double[:, ::1] M0, const double[:, ::1] M1, const double[:, ::1] M2,
              Py_ssize_t m1, Py_ssize_t m2, const double[:, :, ::1] F,
              const double[:, ::1] Gn, const double[:, ::1] Cs, const double[:, :, ::1] Y,
              double rho, double boundary_layer, bint smo,
              const double[::1] z0, double dt, bint rk4, double blowup):
    """Return ``(Z, diverged_at)``; ``diverged_at`` is -1 for a clean run."""
    cdef Py_ssize_t K = F.shape[0]
    cdef Py_ssize_t n = M0.shape[0]
    cdef Py_ssize_t p = Cs.shape[0] if smo else 0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Zarr = np.full((K + 1, n), np.nan)
    cdef double[:, ::1] Z = Zarr
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dZarr = np.zeros((K + 1, n))
    cdef double[:, ::1] dZ = dZarr
    cdef double[::1] delayed = np.zeros(n)
    cdef double* work = <double*> malloc((6 * n + p + 1) * sizeof(double))
    cdef double* zc = work
    cdef double* k1 = work + n
    cdef double* k2 = work + 2 * n
    cdef double* k3 = work + 3 * n
    cdef double* k4 = work + 4 * n
    cdef double* tmp = work + 5 * n
    cdef double* inn = work + 6 * n
    cdef Py_ssize_t k, i, j
    cdef double nrm, h2 = 0.5 * dt, h6 = dt / 6.0
    cdef Py_ssize_t diverged_at = -1
    cdef bint use1 = m1 > 0
    cdef bint use2 = m2 > 0

    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                Z[0, i] = z0[i]
            for k in range(K):
                for i in range(n):
                    zc[i] = Z[k, i]
                _delayed(M1, M2, Z, dZ, use1, use2, k - m1, k - m2, 0, dt, delayed, n)
                _rhs(M0, delayed, F, Gn, Cs, Y, rho, boundary_layer, smo, k, 0, zc, k1, inn, n, p)
                for i in range(n):
                    dZ[k, i] = k1[i]
                if rk4:
                    _delayed(M1, M2, Z, dZ, use1, use2, k - m1, k - m2, 1, dt, delayed, n)
                    for i in range(n):
                        tmp[i] = zc[i] + h2 * k1[i]
                    _rhs(M0, delayed, F, Gn, Cs, Y, rho, boundary_layer, smo, k, 1, tmp, k2, inn, n, p)
                    for i in range(n):
                        tmp[i] = zc[i] + h2 * k2[i]
                    _rhs(M0, delayed, F, Gn, Cs, Y, rho, boundary_layer, smo, k, 1, tmp, k3, inn, n, p)
                    _delayed(M1, M2, Z, dZ, use1, use2, k - m1, k - m2, 2, dt, delayed, n)
                    for i in range(n):
                        tmp[i] = zc[i] + dt * k3[i]
                    _rhs(M0, delayed, F, Gn, Cs, Y, rho, boundary_layer, smo, k, 2, tmp, k4, inn, n, p)
                    for i in range(n):
                        Z[k + 1, i] = zc[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                else:
                    for i in range(n):
                        Z[k + 1, i] = zc[i] + dt * k1[i]
                nrm = 0.0
                for i in range(n):
                    nrm = nrm + Z[k + 1, i] * Z[k + 1, i]
                if not isfinite(nrm) or sqrt(nrm) > blowup:
                    diverged_at = k + 1
                    break
    finally:
        free(work)
    return Zarr, diverged_at
