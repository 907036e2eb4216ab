import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from poissonlab.assembly import (BCType, BoundarySpec, LinearSystem, PatchBC, assemble,
                                 is_singular_laplacian, normalize_neumann, pin_reference)
from poissonlab.errors import MissingPatchBC, NonPositiveCoefficient, PinOnDirichletSystem
from poissonlab.fields import sample_trig_forcing
from poissonlab.geometry import Family, sample_geometry
from poissonlab.krylov import PCGConfig, pcg_solve
from poissonlab.mesh import build_mesh, grid_mesh, interval_mesh


def test_interval_dirichlet_example():
    mesh = interval_mesh(2, 1.0)
    bc = BoundarySpec.all_dirichlet(mesh)
    sys0 = assemble(mesh, bc, np.zeros(2))
    assert np.array_equal(sys0.matrix.toarray(), [[6.0, -2.0], [-2.0, 6.0]])
    assert np.array_equal(sys0.rhs, [0.0, 0.0])
    sys1 = assemble(mesh, bc, np.full(2, -2.0))
    assert np.allclose(sys1.rhs, [1.0, 1.0])
    assert np.allclose(np.linalg.solve(sys1.matrix.toarray(), sys1.rhs), [0.25, 0.25])


def test_interval_neumann_pinning_example():
    mesh = interval_mesh(2, 1.0)
    raw = assemble(mesh, BoundarySpec.all_neumann(mesh), np.zeros(2), pin_cell=False)
    assert np.array_equal(raw.matrix.toarray(), [[2.0, -2.0], [-2.0, 2.0]])
    pinned = pin_reference(raw, 0)
    assert np.array_equal(pinned.matrix.toarray(), [[1.0, 0.0], [0.0, 2.0]])
    assert pinned.pinned_cell == 0


def test_dirichlet_and_neumann_boundary_terms():
    mesh = interval_mesh(2, 1.0)
    left, right = sorted(p["patch_id"] for p in mesh.patches)
    bc = BoundarySpec({left: PatchBC(BCType.DIRICHLET, 3.0), right: PatchBC(BCType.NEUMANN, 0.5)})
    s = assemble(mesh, bc, np.zeros(2))
    # Dirichlet: D|S|/d = 4 on the diagonal and 4 * g on the rhs; Neumann: D|S| g
    lcell = mesh.bface_owner[mesh.bface_patch == left][0]
    rcell = mesh.bface_owner[mesh.bface_patch == right][0]
    assert s.matrix[lcell, lcell] == 2.0 + 4.0 and s.matrix[rcell, rcell] == 2.0
    assert s.rhs[lcell] == 12.0 and s.rhs[rcell] == 0.5


def test_all_neumann_null_space_and_single_pin():
    spec = sample_geometry(Family.CORNER_REMOVED_SQUARE, 2, 4, base_resolution=24)
    mesh = build_mesh(spec)
    f = normalize_neumann(sample_trig_forcing(mesh, seed=1), mesh)
    raw = assemble(mesh, BoundarySpec.all_neumann(mesh), f, pin_cell=False)
    assert np.abs(raw.matrix @ np.ones(mesh.n_cells)).max() <= 1e-12
    assert is_singular_laplacian(raw)
    pinned = assemble(mesh, BoundarySpec.all_neumann(mesh), f)
    a = pinned.matrix.toarray()
    identity_rows = [i for i in range(len(a))
                     if a[i, i] == 1.0 and np.count_nonzero(a[i]) == 1 and np.count_nonzero(a[:, i]) == 1]
    assert identity_rows == [0] and pinned.pinned_cell == 0 and pinned.rhs[0] == 0.0
    assert scipy.linalg.eigvalsh(a)[0] > 0
    u, trace = pcg_solve(pinned, config=PCGConfig(abs_tol=1e-12))
    assert trace.converged and u[0] == 0.0


def test_pin_rejects_nonsingular_system(sys16):
    with pytest.raises(PinOnDirichletSystem):
        pin_reference(sys16, 0)


def test_missing_patch_and_bad_coefficient():
    mesh = interval_mesh(3)
    with pytest.raises(MissingPatchBC):
        assemble(mesh, BoundarySpec({0: PatchBC(BCType.DIRICHLET, 0.0)}), np.zeros(3))
    bc = BoundarySpec.all_dirichlet(mesh)
    with pytest.raises(NonPositiveCoefficient):
        assemble(mesh, bc, np.zeros(3), coeff=np.array([1.0, 0.0, 1.0]))


def test_normalize_neumann_examples():
    mesh = build_mesh(sample_geometry(Family.CORNER_REMOVED_SQUARE, 4, 0, base_resolution=64))
    assert np.all(normalize_neumann(np.full(mesh.n_cells, 3.7), mesh) == 0.0)
    f = normalize_neumann(sample_trig_forcing(mesh, seed=3), mesh)
    v = mesh.cell_volumes
    assert abs(f @ v) / v.sum() < 1e-13
    assert np.abs(normalize_neumann(f, mesh) - f).max() <= 1e-15


def test_symmetry_exact_and_positive_diagonal():
    for k, regime in ((0, "dirichlet"), (3, "random"), (4, "neumann")):
        spec = sample_geometry(Family.CORNER_REMOVED_SQUARE, k, 1, base_resolution=32)
        mesh = build_mesh(spec)
        s = assemble(mesh, BoundarySpec.for_regime(regime, mesh, 1), sample_trig_forcing(mesh))
        assert abs(s.matrix - s.matrix.T).max() == 0.0
        assert np.all(s.diagonal > 0)


def test_interior_stencil():
    mesh = grid_mesh(np.ones((5, 5), bool), 0.3)
    s = assemble(mesh, BoundarySpec.all_dirichlet(mesh), np.zeros(25))
    centre = 12
    row = s.matrix.getrow(centre).toarray().ravel()
    assert row[centre] == pytest.approx(4.0)
    assert sorted(row[row != 0])[:4] == pytest.approx([-1.0] * 4)


def test_variable_coefficient_scaling():
    mesh = build_mesh(sample_geometry(Family.PERFORATED_PLATE, None, 2, base_resolution=24))
    bc = BoundarySpec.random(mesh, 5)
    f = sample_trig_forcing(mesh)
    one = assemble(mesh, bc, f)
    scaled = assemble(mesh, bc, f, coeff=np.full(mesh.n_cells, 2.5))
    assert np.allclose(scaled.matrix.toarray(), 2.5 * one.matrix.toarray(), rtol=1e-15, atol=0)


def test_harmonic_mean_faces():
    mesh = interval_mesh(2, 1.0)
    s = assemble(mesh, BoundarySpec.all_dirichlet(mesh), np.zeros(2), coeff=np.array([1.0, 3.0]))
    de = 2 * 1.0 * 3.0 / 4.0
    assert s.matrix[0, 1] == pytest.approx(-de / 0.5)
    assert s.matrix[0, 0] == pytest.approx(de / 0.5 + 1.0 / 0.25)
    assert s.matrix[1, 1] == pytest.approx(de / 0.5 + 3.0 / 0.25)


def test_random_bc_has_dirichlet_patch():
    spec = sample_geometry(Family.CORNER_REMOVED_SQUARE, 4, 0, base_resolution=16)
    mesh = build_mesh(spec)
    for seed in range(200):
        bc = BoundarySpec.random(mesh, seed)
        assert not bc.is_all_neumann()
        assert BoundarySpec.random(mesh, seed).to_dict() == bc.to_dict()


def test_system_save_load(tmp_path, sys32):
    sys32.save(tmp_path / "sys")
    back = LinearSystem.load(tmp_path / "sys")
    assert (back.matrix != sys32.matrix).nnz == 0
    assert np.array_equal(back.rhs, sys32.rhs)


def mms_error(n):
    L = 2 * math.pi
    mesh = grid_mesh(np.ones((n, n), bool), L / n)
    exact = lambda p: np.sin(p[:, 0]) * np.sin(p[:, 1])
    bc = BoundarySpec.uniform(mesh, BCType.DIRICHLET, exact)
    f = -2.0 * exact(mesh.cell_centroids)
    system = assemble(mesh, bc, f)
    tol = 1e-13 * np.linalg.norm(system.rhs)
    u, trace = pcg_solve(system, config=PCGConfig(max_iters=20000, abs_tol=tol))
    assert trace.converged
    ue = exact(mesh.cell_centroids)
    return np.linalg.norm(u - ue) / np.linalg.norm(ue)


def test_manufactured_solution_order():
    errs = [mms_error(n) for n in (32, 64, 128)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders
