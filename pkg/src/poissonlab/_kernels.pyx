# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled PCG inner loop with a Jacobi preconditioner.

Status codes returned by :func:`pcg_run` are shared with ``_pykernels``:
0 iteration budget exhausted, 1 residual below ``stop_tol``, 2 residual below
``zero_floor`` (treated as exactly zero), -1 non-positive curvature ``p.Ap``.
"""
import numpy as np
from libc.math cimport sqrt


cdef void _matvec(const Py_ssize_t[::1] indptr, const Py_ssize_t[::1] indices,
                  const double[::1] data, const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(out.shape[0]):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc = acc + data[k] * x[indices[k]]
        out[i] = acc


def csr_matvec(const Py_ssize_t[::1] indptr, const Py_ssize_t[::1] indices,
               const double[::1] data, const double[::1] x):
    out = np.empty(x.shape[0])
    cdef double[::1] o = out
    with nogil:
        _matvec(indptr, indices, data, x, o)
    return out


def pcg_run(const Py_ssize_t[::1] indptr, const Py_ssize_t[::1] indices,
            const double[::1] data, const double[::1] inv_diag, const double[::1] b,
            double[::1] u, Py_ssize_t max_iters, double stop_tol, double zero_floor,
            double[::1] res_out):
    """Run PCG in place on ``u``; returns ``(iterations, status)``."""
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t i, k = 0
    cdef int status = 0
    cdef double rz, rz_new, rr, pap, alpha, beta, rnorm, ri, zi
    r_arr = np.empty(n)
    z_arr = np.empty(n)
    p_arr = np.empty(n)
    ap_arr = np.empty(n)
    cdef double[::1] r = r_arr
    cdef double[::1] z = z_arr
    cdef double[::1] p = p_arr
    cdef double[::1] ap = ap_arr

    with nogil:
        _matvec(indptr, indices, data, u, ap)
        rz = 0.0
        rr = 0.0
        for i in range(n):
            ri = b[i] - ap[i]
            zi = inv_diag[i] * ri
            r[i] = ri
            z[i] = zi
            p[i] = zi
            rz = rz + ri * zi
            rr = rr + ri * ri
        rnorm = sqrt(rr)
        res_out[0] = rnorm
        while True:
            if rnorm <= zero_floor:
                status = 2
                break
            if rnorm <= stop_tol:
                status = 1
                break
            if k >= max_iters:
                status = 0
                break
            _matvec(indptr, indices, data, p, ap)
            pap = 0.0
            for i in range(n):
                pap = pap + p[i] * ap[i]
            if not (pap > 0.0):
                status = -1
                break
            alpha = rz / pap
            rz_new = 0.0
            rr = 0.0
            for i in range(n):
                u[i] = u[i] + alpha * p[i]
                ri = r[i] - alpha * ap[i]
                zi = inv_diag[i] * ri
                r[i] = ri
                z[i] = zi
                rz_new = rz_new + ri * zi
                rr = rr + ri * ri
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            k = k + 1
            rnorm = sqrt(rr)
            res_out[k] = rnorm
    return k, status
