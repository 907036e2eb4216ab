import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from conftest import block_system, diag_system, square_system
from poissonlab import kernels
from poissonlab.assembly import LinearSystem
from poissonlab.errors import NegativeQuadraticForm, NoConvergence, NotSPDDetected
from poissonlab.krylov import (PCGConfig, SpectralEstimate, dense_spectrum, energy_norm,
                               estimate_spectrum, f_k, pcg_solve, self_consistency_residual)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


def test_diag_one_step(backend):
    s = diag_system([2.0, 3.0], [2.0, 3.0])
    u, trace = pcg_solve(s)
    assert np.allclose(u, [1.0, 1.0]) and trace.iterations_used == 1 and trace.converged
    assert np.allclose(f_k(s, np.zeros(2), 1), [1.0, 1.0])


def test_exact_start_returns_immediately(backend, sys16):
    u_star = scipy.linalg.solve(sys16.matrix.toarray(), sys16.rhs)
    u, trace = pcg_solve(sys16, u_star)
    assert trace.iterations_used == 0 and np.array_equal(u, u_star)
    assert np.array_equal(f_k(sys16, u_star, 7), u_star)
    assert np.linalg.norm(self_consistency_residual(sys16, u_star, 3)) == 0.0


def test_not_spd_detected(backend):
    s = LinearSystem(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), np.array([1.0, -1.0]))
    with pytest.raises(NotSPDDetected):
        pcg_solve(s)
    with pytest.raises(NotSPDDetected):
        pcg_solve(diag_system([1.0, -1.0], [1.0, 1.0]))


def test_c4_128_converges_in_budget(backend):
    s = square_system(128, "dirichlet", seed=3, category=4)
    u, trace = pcg_solve(s, config=PCGConfig())
    assert trace.converged and trace.iterations_used <= 3000
    assert trace.residual_norms[-1] <= 1e-8


def test_backends_agree(sys32):
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled kernel not built")
    u0 = np.random.default_rng(1).standard_normal(sys32.n)
    out = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            out[name] = (f_k(sys32, u0, 25), pcg_solve(sys32, u0)[1].residual_norms)
        finally:
            kernels.set_backend(prev)
    (a, ra), (b, rb) = out.values()
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    assert len(ra) == len(rb) and np.allclose(ra, rb, rtol=1e-9)


def test_stored_iterates_match_recurrence(sys16):
    u, trace = pcg_solve(sys16, store_iterates=True)
    assert len(trace.iterates) == len(trace.residual_norms)
    for k, x in enumerate(trace.iterates):
        assert np.linalg.norm(sys16.residual(x)) == pytest.approx(trace.residual_norms[k], rel=1e-6,
                                                                  abs=1e-12)


def test_s_k_large_k_is_error(sys32):
    u_star, _ = pcg_solve(sys32, config=PCGConfig(max_iters=10000, abs_tol=1e-14))
    u = np.random.default_rng(0).standard_normal(sys32.n)
    s = self_consistency_residual(sys32, u, 400)
    assert np.linalg.norm(s - (u - u_star)) <= 1e-8 * np.linalg.norm(u - u_star)


def test_f_k_moves_off_solution(sys16):
    rng = np.random.default_rng(2)
    for _ in range(20):
        u = rng.standard_normal(sys16.n)
        for K in (1, 2, 5, 20):
            assert not np.array_equal(f_k(sys16, u, K), u)


def test_energy_norm_examples():
    s = diag_system([2.0, 3.0], [0.0, 0.0])
    assert energy_norm(s, np.zeros(2)) == 0.0
    assert energy_norm(s, np.ones(2)) == pytest.approx(math.sqrt(5))
    bad = diag_system([1.0, -4.0], [0.0, 0.0])
    with pytest.raises(NegativeQuadraticForm):
        energy_norm(bad, np.array([0.0, 1.0]))


def test_energy_norm_rayleigh_bounds(sys16):
    ev = scipy.linalg.eigvalsh(sys16.matrix.toarray())
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.standard_normal(sys16.n)
        q = energy_norm(sys16, x) ** 2
        assert ev[0] * (x @ x) * (1 - 1e-12) <= q <= ev[-1] * (x @ x) * (1 + 1e-12)


def test_spectrum_examples():
    est = estimate_spectrum(diag_system([1.0, 5.0, 9.0], [1, 1, 1]))
    assert est.kappa == pytest.approx(1.0) and est.rho == pytest.approx(0.0, abs=1e-12)
    est = estimate_spectrum(diag_system([1.0, 3.0], [1, 1]), preconditioner=1.0)
    assert est.kappa == pytest.approx(3.0) and est.rho == pytest.approx(0.5)


@pytest.mark.parametrize("regime", ["dirichlet", "neumann", "random"])
def test_spectrum_matches_dense(regime):
    s = square_system(32, regime, seed=1, category=2)
    est = estimate_spectrum(s)
    dense = dense_spectrum(s)
    assert est.kappa == pytest.approx(dense.kappa, rel=1e-2)
    assert est.lambda_min == pytest.approx(dense.lambda_min, rel=1e-2)
    assert est.lambda_max == pytest.approx(dense.lambda_max, rel=1e-2)


def test_small_systems_within_one_percent():
    for nx, ny in ((4, 4), (10, 12), (14, 14)):
        s = block_system(nx, ny, "neumann")
        assert estimate_spectrum(s).kappa == pytest.approx(dense_spectrum(s).kappa, rel=1e-2)


def test_spectrum_no_convergence(sys32):
    with pytest.raises(NoConvergence):
        estimate_spectrum(sys32, iters=3)


def test_config_validation():
    for bad in (dict(max_iters=0), dict(abs_tol=0.0), dict(K=0)):
        with pytest.raises(ValueError):
            PCGConfig(**bad)
    est = SpectralEstimate.from_extremes(1.0, 4.0)
    assert est.rho == pytest.approx(0.6)
    assert est.inflated().rho > est.rho


def test_monotone_energy_error(sys32):
    u_star = scipy.linalg.solve(sys32.matrix.toarray(), sys32.rhs)
    u = np.random.default_rng(5).standard_normal(sys32.n)
    errs = [energy_norm(sys32, f_k(sys32, u, K) - u_star) for K in range(1, 41)]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(errs, errs[1:]))
