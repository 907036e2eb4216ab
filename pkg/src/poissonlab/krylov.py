"""Jacobi-preconditioned conjugate gradients and the truncated map ``F_K``.

``F_K(u)`` is the iterate after exactly ``K`` PCG steps started from ``u``;
the only early exit is a residual that is zero to machine scale
(``||r|| <= 1e-15 ||b||``), after which the iterate is left unchanged.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .errors import NegativeQuadraticForm, NoConvergence, NotSPDDetected
from .rng import stream

ZERO_RESIDUAL_RTOL = 1e-15


@dataclass(frozen=True)
class PCGConfig:
    max_iters: int = 3000
    abs_tol: float = 1e-8
    K: int = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be > 0")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class SolveTrace:
    residual_norms: np.ndarray
    iterations_used: int
    converged: bool
    iterates: list = None
    backend: str = ""


@dataclass(frozen=True)
class SpectralEstimate:
    lambda_min: float
    lambda_max: float
    kappa: float
    rho: float
    iterations: int = 0

    @classmethod
    def from_extremes(cls, lam_min, lam_max, iterations=0):
        if not (0 < lam_min <= lam_max * (1 + 1e-12)):
            raise NotSPDDetected(f"extreme eigenvalues {lam_min!r}, {lam_max!r} are not SPD")
        lam_max = max(lam_max, lam_min)
        kappa = lam_max / lam_min
        return cls(float(lam_min), float(lam_max), float(kappa),
                   float((kappa - 1.0) / (kappa + 1.0)), iterations)

    def inflated(self, factor=1.01):
        """Same estimate with ``kappa`` enlarged, giving a safe upper bound on ``rho``."""
        kappa = self.kappa * factor
        return SpectralEstimate(self.lambda_min, self.lambda_min * kappa, kappa,
                                (kappa - 1.0) / (kappa + 1.0), self.iterations)


def _inv_diag(system, preconditioner):
    if preconditioner is None:
        d = system.diagonal
        if not np.all(d > 0):
            raise NotSPDDetected("matrix diagonal is not strictly positive")
        return 1.0 / d
    m = np.broadcast_to(np.asarray(preconditioner, dtype=float), (system.n,))
    if not np.all(m > 0):
        raise NotSPDDetected("preconditioner diagonal must be strictly positive")
    return 1.0 / m


def _csr_arrays(system):
    cached = system.__dict__.get("_csr_intp")
    if cached is None:
        a = system.matrix
        cached = (np.ascontiguousarray(a.indptr, dtype=np.intp),
                  np.ascontiguousarray(a.indices, dtype=np.intp),
                  np.ascontiguousarray(a.data, dtype=float))
        system.__dict__["_csr_intp"] = cached
    return cached


def _run(system, u, max_iters, stop_tol, preconditioner, iterates=None):
    indptr, indices, data = _csr_arrays(system)
    inv_diag = _inv_diag(system, preconditioner)
    b = np.ascontiguousarray(system.rhs, dtype=float)
    u = np.array(u, dtype=float, copy=True)
    if u.shape != b.shape:
        raise ValueError(f"vector has shape {u.shape}, system has {b.shape}")
    res = np.empty(max_iters + 1)
    floor = ZERO_RESIDUAL_RTOL * float(np.linalg.norm(b))
    if iterates is not None:
        backend = "python"
        k, status = kernels.module("python").pcg_run(indptr, indices, data, inv_diag, b, u,
                                                     max_iters, stop_tol, floor, res, iterates)
    else:
        backend = kernels.get_backend()
        k, status = kernels.module().pcg_run(indptr, indices, data, inv_diag, b, u,
                                             max_iters, stop_tol, floor, res)
    if status == -1:
        raise NotSPDDetected(f"non-positive curvature p.Ap at PCG step {k}")
    return u, res[:k + 1], k, status, backend


def pcg_solve(system, u0=None, config=None, *, preconditioner=None, store_iterates=False):
    """Solve ``A u = b`` with PCG.

    Terminates once ``||r_k||_2 <= config.abs_tol`` or after
    ``config.max_iters`` steps.

    Returns
    -------
    u : ndarray
    trace : SolveTrace
    """
    config = config or PCGConfig()
    if u0 is None:
        u0 = np.zeros(system.n)
    iterates = [] if store_iterates else None
    u, res, k, status, backend = _run(system, u0, config.max_iters, config.abs_tol,
                                      preconditioner, iterates)
    converged = bool(res[-1] <= config.abs_tol)
    return u, SolveTrace(res, k, converged, iterates, backend)


def f_k(system, u, K, *, preconditioner=None):
    """Iterate after exactly ``K`` PCG steps from ``u`` (stateless)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    out, _, _, _, _ = _run(system, u, int(K), -1.0, preconditioner)
    return out


def self_consistency_residual(system, u, K, *, preconditioner=None):
    """``s_K(u) = u - F_K(u)``."""
    u = np.asarray(u, dtype=float)
    return u - f_k(system, u, K, preconditioner=preconditioner)


def _matrix(system_or_matrix):
    return getattr(system_or_matrix, "matrix", system_or_matrix)


def energy_norm(system, x):
    """``sqrt(x^T A x)``."""
    x = np.asarray(x, dtype=float)
    ax = _matrix(system) @ x
    q = float(x @ ax)
    if q < 0.0:
        if q < -1e-13 * np.linalg.norm(x) * np.linalg.norm(ax):
            raise NegativeQuadraticForm(f"x^T A x = {q!r} < 0")
        q = 0.0
    return float(np.sqrt(q))


def preconditioned_dense(system, preconditioner=None):
    """Dense ``C = M^{-1/2} A M^{-1/2}`` for small systems."""
    s = np.sqrt(_inv_diag(system, preconditioner))
    a = _matrix(system)
    a = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    return s[:, None] * a * s[None, :]


def dense_spectrum(system, preconditioner=None):
    """Exact extreme eigenvalues of ``C`` by a dense symmetric eigensolve."""
    ev = scipy.linalg.eigvalsh(preconditioned_dense(system, preconditioner))
    return SpectralEstimate.from_extremes(ev[0], ev[-1])


def estimate_spectrum(system, iters=1000, *, preconditioner=None, rtol=1e-5, seed=0):
    """Extreme eigenvalues of ``C = M^{-1/2} A M^{-1/2}`` by Lanczos.

    ``C`` is applied implicitly through diagonal scalings around sparse
    products. The start vector is zero on a pinned cell, whose identity row
    decouples it from the rest of the operator, so the trivial eigenvalue it
    contributes is deflated.

    Raises
    ------
    NoConvergence
        If the extreme Ritz values do not meet the residual bound
        ``beta_j |s_j| <= rtol |theta|`` within ``iters`` steps.
    """
    n = system.n
    s = np.sqrt(_inv_diag(system, preconditioner))
    a = _matrix(system)

    def apply(x):
        return s * (a @ (s * x))

    v = stream(seed, "krylov/lanczos").standard_normal(n)
    if system.pinned_cell is not None and n > 1:
        v[system.pinned_cell] = 0.0
    v /= np.linalg.norm(v)
    m = min(int(iters), n)
    basis = np.empty((m + 1, n))
    basis[0] = v
    alphas, betas = [], []
    for j in range(m):
        w = apply(basis[j])
        alpha = float(basis[j] @ w)
        w -= alpha * basis[j]
        if j > 0:
            w -= betas[-1] * basis[j - 1]
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w -= basis[:j + 1].T @ (basis[:j + 1] @ w)
        beta = float(np.linalg.norm(w))
        alphas.append(alpha)
        theta, vecs = _ritz(alphas, betas)
        lo, hi = theta[0], theta[-1]
        scale = max(abs(hi), np.finfo(float).tiny)
        if beta <= 1e-12 * scale:
            return SpectralEstimate.from_extremes(lo, hi, j + 1)
        if j >= 1:
            err_lo = beta * abs(vecs[-1, 0])
            err_hi = beta * abs(vecs[-1, -1])
            if err_lo <= rtol * abs(lo) and err_hi <= rtol * abs(hi):
                return SpectralEstimate.from_extremes(lo, hi, j + 1)
        betas.append(beta)
        basis[j + 1] = w / beta
    if m == n:
        return SpectralEstimate.from_extremes(lo, hi, m)
    raise NoConvergence(f"Lanczos extreme Ritz values not converged after {m} steps")


def _ritz(alphas, betas):
    if len(alphas) == 1:
        return np.array(alphas), np.ones((1, 1))
    return scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
