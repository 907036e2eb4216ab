"""Randomized invariants over small meshes and SPD matrices."""
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from hypothesis import HealthCheck, assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import label

from poissonlab.assembly import BoundarySpec, LinearSystem, assemble
from poissonlab.geometry import Family, sample_geometry
from poissonlab.krylov import energy_norm, f_k
from poissonlab.mesh import grid_mesh
from poissonlab.rng import stream
from poissonlab.theory import kantorovich_slack, random_spd, reference, steepest_descent_ratio

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

seeds = st.integers(0, 2**64 - 1)


@st.composite
def connected_masks(draw):
    ny = draw(st.integers(2, 9))
    nx = draw(st.integers(2, 9))
    mask = draw(arrays(bool, (ny, nx), elements=st.booleans()))
    lab, n = label(mask)
    assume(n >= 1)
    sizes = np.bincount(lab.ravel())[1:]
    keep = lab == (1 + int(np.argmax(sizes)))
    assume(keep.sum() >= 2)
    return keep


@st.composite
def spd_systems(draw):
    seed = draw(seeds)
    n = draw(st.integers(2, 12))
    rng = stream(seed, "test/spd", n)
    c, _ = random_spd(rng, n, log_kappa_max=draw(st.floats(0.0, 4.0)))
    d = 10.0 ** rng.uniform(-1, 1, n)
    a = (c * d[:, None]) * d[None, :]
    a = 0.5 * (a + a.T)
    return LinearSystem(sp.csr_matrix(a), rng.standard_normal(n)), rng


@given(connected_masks(), seeds)
def test_mesh_and_assembly_invariants(mask, seed):
    mesh = grid_mesh(mask, 0.5)
    n = mesh.n_cells
    assert n == mask.sum()
    count = (np.bincount(mesh.face_owner, minlength=n) + np.bincount(mesh.face_neighbor, minlength=n)
             + np.bincount(mesh.bface_owner, minlength=n))
    assert np.all(count == 4)
    faces = np.concatenate([np.nonzero(mesh.bface_patch == p["patch_id"])[0] for p in mesh.patches])
    assert np.array_equal(np.sort(faces), np.arange(mesh.n_boundary_faces))
    bc = BoundarySpec.random(mesh, seed)
    forcing = stream(seed, "test/forcing").standard_normal(n)
    system = assemble(mesh, bc, forcing)
    a = system.matrix.toarray()
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) > 0)
    assert scipy.linalg.eigvalsh(a)[0] > 0


@given(connected_masks())
def test_all_neumann_pinned_is_spd(mask):
    mesh = grid_mesh(mask, 1.0)
    system = assemble(mesh, BoundarySpec.all_neumann(mesh), np.ones(mesh.n_cells))
    assert system.pinned_cell == 0 and np.all(system.rhs == 0.0)
    assert scipy.linalg.eigvalsh(system.matrix.toarray())[0] > 0


@given(spd_systems(), st.integers(1, 15))
def test_pcg_k_bounds(data, K):
    system, rng = data
    ref = reference(system)
    u = rng.standard_normal(system.n)
    e = ref.error_A(u)
    assume(e > 1e-6)
    ek = ref.error_A(f_k(system, u, K))
    assert ek <= (ref.rho ** K) * e * (1 + 1e-8) + 1e-12 * energy_norm(system, ref.u_star)
    s = u - f_k(system, u, K)
    ratio = energy_norm(system, s) / e
    rk = ref.rho ** K
    assert 1 - rk - 1e-8 <= ratio <= 1 + rk + 1e-8


@given(seeds, st.integers(2, 30))
def test_kantorovich_and_steepest_descent(seed, n):
    rng = stream(seed, "test/lemmas", n)
    c, ev = random_spd(rng, n)
    kappa = ev[-1] / ev[0]
    x = rng.standard_normal(n)
    assert kantorovich_slack(c, x, np.linalg.solve(c, x), kappa) >= -1e-10
    assert steepest_descent_ratio(c, x) <= (kappa - 1) / (kappa + 1) + 1e-10


@given(seeds, st.text(max_size=10), st.lists(st.integers(0, 1000), max_size=3))
def test_streams_are_reproducible(seed, tag, index):
    a = stream(seed, tag, *index).random(4)
    b = stream(seed, tag, *index).random(4)
    assert np.array_equal(a, b)


@given(seeds, st.integers(0, 4))
def test_geometry_invariants(seed, k):
    spec = sample_geometry(Family.CORNER_REMOVED_SQUARE, k, seed)
    L = spec.domain_length
    assert spec == sample_geometry(Family.CORNER_REMOVED_SQUARE, k, seed)
    for c in spec.params["corners"]:
        assert 0.1 * L - 1e-12 <= c["width"] <= 0.4 * L + 1e-12
        assert 0.1 * L - 1e-12 <= c["height"] <= 0.4 * L + 1e-12
