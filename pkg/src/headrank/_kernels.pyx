# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic one-sided Jacobi SVD and CSR products.

The pure-numpy counterparts live in ``headrank._fallback`` and must keep
identical signatures.
"""

import numpy as np
cimport numpy as cnp
from libc.float cimport DBL_EPSILON
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_columns(double[:, ::1] g, double[:, ::1] v, double tol, int max_sweeps):
    """Orthogonalize the rows of ``g`` in place (rows are matrix columns).

    Rotations are mirrored onto the rows of ``v``. Pairs involving a column
    below ``DBL_EPSILON * ||g||_F`` are skipped: such a column is rounding
    noise and rotating it only regenerates noise. Returns the number of
    sweeps used, or -1 if ``max_sweeps`` was reached without convergence.
    """
    cdef Py_ssize_t n = g.shape[0]
    cdef Py_ssize_t m = g.shape[1]
    cdef Py_ssize_t nv = v.shape[1]
    cdef Py_ssize_t p, q, k
    cdef double alpha, beta, gamma, zeta, t, c, s, gp, gq
    cdef double floor2 = 0.0
    cdef int sweep
    cdef bint rotated

    for p in range(n):
        for k in range(m):
            floor2 += g[p, k] * g[p, k]
    floor2 *= DBL_EPSILON * DBL_EPSILON

    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += g[p, k] * g[p, k]
                    beta += g[q, k] * g[q, k]
                    gamma += g[p, k] * g[q, k]
                if gamma == 0.0 or alpha <= floor2 or beta <= floor2 \
                        or fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if fabs(zeta) > 1e150:
                    t = 0.5 / zeta
                elif zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    gp = g[p, k]
                    gq = g[q, k]
                    g[p, k] = c * gp - s * gq
                    g[q, k] = s * gp + c * gq
                for k in range(nv):
                    gp = v[p, k]
                    gq = v[q, k]
                    v[p, k] = c * gp - s * gq
                    v[q, k] = s * gp + c * gq
        if not rotated:
            return sweep + 1
    return -1


def csr_matmat(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[:, ::1] x):
    """Return ``A @ x`` for CSR ``A``."""
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t l = x.shape[1]
    cdef Py_ssize_t i, jj, col, k
    cdef double a
    out_arr = np.zeros((nrows, l), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(nrows):
        for jj in range(indptr[i], indptr[i + 1]):
            col = indices[jj]
            a = data[jj]
            for k in range(l):
                out[i, k] += a * x[col, k]
    return out_arr


def csr_rmatmat(const long long[::1] indptr, const long long[::1] indices,
                const double[::1] data, const double[:, ::1] x, Py_ssize_t ncols):
    """Return ``A.T @ x`` for CSR ``A`` with ``ncols`` columns."""
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t l = x.shape[1]
    cdef Py_ssize_t i, jj, col, k
    cdef double a
    out_arr = np.zeros((ncols, l), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(nrows):
        for jj in range(indptr[i], indptr[i + 1]):
            col = indices[jj]
            a = data[jj]
            for k in range(l):
                out[col, k] += a * x[i, k]
    return out_arr
