"""Pure-Python twin of ``_kernels``; same signatures and status codes."""
import numpy as np
import scipy.sparse as sp


def _as_csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def csr_matvec(indptr, indices, data, x):
    return _as_csr(indptr, indices, data) @ np.asarray(x)


def pcg_run(indptr, indices, data, inv_diag, b, u, max_iters, stop_tol, zero_floor,
            res_out, iterates=None):
    a = _as_csr(indptr, indices, data)
    r = b - a @ u
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    rnorm = np.sqrt(r @ r)
    res_out[0] = rnorm
    if iterates is not None:
        iterates.append(u.copy())
    k = 0
    while True:
        if rnorm <= zero_floor:
            return k, 2
        if rnorm <= stop_tol:
            return k, 1
        if k >= max_iters:
            return k, 0
        ap = a @ p
        pap = p @ ap
        if not pap > 0.0:
            return k, -1
        alpha = rz / pap
        u += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        k += 1
        rnorm = np.sqrt(r @ r)
        res_out[k] = rnorm
        if iterates is not None:
            iterates.append(u.copy())
