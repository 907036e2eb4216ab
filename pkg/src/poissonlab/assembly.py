"""Cell-centered FVM discretization of ``div(D grad u) = f``.

The flux balance over cell ``i`` reads

    sum_e D_e |S_e| (u_N(e) - u_i) / d_e = f_i |V_i|

and is negated once so that the assembled matrix is symmetric positive
definite with a positive diagonal: ``A u = b`` with ``b_i = -f_i |V_i|`` plus
boundary terms.
"""
from dataclasses import dataclass, field
import enum
import json
import os

import numpy as np
import scipy.sparse as sp

from . import io
from .errors import MissingPatchBC, NonPositiveCoefficient, PinOnDirichletSystem
from .rng import stream


class BCType(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class PatchBC:
    bc_type: BCType
    value: object = 0.0  # scalar, or callable mapping (n, dim) centroids -> (n,) values

    def evaluate(self, points):
        if callable(self.value):
            return np.broadcast_to(np.asarray(self.value(points), dtype=float),
                                   (len(points),)).copy()
        return np.full(len(points), float(self.value))


@dataclass
class BoundarySpec:
    patches: dict = field(default_factory=dict)

    @classmethod
    def uniform(cls, mesh, bc_type, value=0.0):
        return cls({p["patch_id"]: PatchBC(BCType(bc_type), value) for p in mesh.patches})

    @classmethod
    def all_dirichlet(cls, mesh, value=0.0):
        return cls.uniform(mesh, BCType.DIRICHLET, value)

    @classmethod
    def all_neumann(cls, mesh, value=0.0):
        return cls.uniform(mesh, BCType.NEUMANN, value)

    @classmethod
    def random(cls, mesh, seed, value=0.0):
        """Independent fair coin per patch; redrawn until a Dirichlet patch exists."""
        rng = stream(seed, "bc/random")
        n = mesh.n_patches
        while True:
            draw = rng.random(n) < 0.5
            if draw.any():
                break
        return cls({p["patch_id"]: PatchBC(BCType.DIRICHLET if d else BCType.NEUMANN, value)
                    for p, d in zip(mesh.patches, draw)})

    @staticmethod
    def for_regime(regime, mesh, seed=0):
        regime = regime.lower().replace("_", "-")
        if regime in ("dirichlet", "all-dirichlet"):
            return BoundarySpec.all_dirichlet(mesh)
        if regime in ("neumann", "all-neumann"):
            return BoundarySpec.all_neumann(mesh)
        if regime in ("random", "randombc", "random-bc"):
            return BoundarySpec.random(mesh, seed)
        raise ValueError(f"unknown BC regime {regime!r}")


    def is_all_neumann(self):
        return all(bc.bc_type is BCType.NEUMANN for bc in self.patches.values())

    def face_arrays(self, mesh):
        """Per boundary face: ``(is_dirichlet, value)``."""
        is_d = np.zeros(mesh.n_boundary_faces, dtype=bool)
        val = np.zeros(mesh.n_boundary_faces)
        for p in mesh.patches:
            pid = p["patch_id"]
            bc = self.patches.get(pid)
            if bc is None:
                raise MissingPatchBC(f"no boundary condition for patch {pid} ({p['label']})")
            faces = np.nonzero(mesh.bface_patch == pid)[0]
            is_d[faces] = bc.bc_type is BCType.DIRICHLET
            val[faces] = bc.evaluate(mesh.bface_centroid[faces])
        return is_d, val

    def to_dict(self):
        out = {}
        for pid, bc in sorted(self.patches.items()):
            if callable(bc.value):
                raise TypeError("callable boundary values cannot be serialized")
            out[str(pid)] = {"type": bc.bc_type.value, "value": float(bc.value)}
        return {"patches": out}

    @classmethod
    def from_dict(cls, data, mesh):
        """Read ``{"patches": {...}}``, optionally with ``"default"``, or ``{"regime": ...}``."""
        if "regime" in data:
            return cls.for_regime(data["regime"], mesh, int(data.get("seed", 0)))
        entries = data.get("patches", {})
        default = data.get("default")
        out = {}
        for p in mesh.patches:
            pid = p["patch_id"]
            e = entries.get(str(pid), default)
            if e is None:
                raise MissingPatchBC(f"no boundary condition for patch {pid} ({p['label']})")
            out[pid] = PatchBC(BCType(e["type"]), float(e.get("value", 0.0)))
        return cls(out)


@dataclass(eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    pinned_cell: int = None

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def diagonal(self):
        d = self.__dict__.get("_diag")
        if d is None:
            d = self.matrix.diagonal()
            self.__dict__["_diag"] = d
        return d

    def residual(self, u):
        """``b - A u``."""
        return self.rhs - self.matrix @ u

    def with_rhs(self, rhs):
        return LinearSystem(self.matrix, np.asarray(rhs, dtype=float), self.pinned_cell)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        io.write_matrix(os.path.join(directory, "matrix.mtx"), self.matrix)
        io.write_vector(os.path.join(directory, "rhs.csv"), self.rhs)
        io.write_json(os.path.join(directory, "system.json"),
                      {"n": self.n, "pinned_cell": self.pinned_cell})

    @classmethod
    def load(cls, directory):
        matrix = io.read_matrix(os.path.join(directory, "matrix.mtx"))
        rhs = io.read_vector(os.path.join(directory, "rhs.csv"))
        meta_path = os.path.join(directory, "system.json")
        pinned = None
        if os.path.exists(meta_path):
            with open(meta_path) as fh:
                pinned = json.load(fh).get("pinned_cell")
        return cls(matrix, rhs, pinned)


def coefficient_values(mesh, coeff):
    if coeff is None:
        return np.ones(mesh.n_cells)
    d = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_cells,)).copy()
    if not np.all(d > 0):
        raise NonPositiveCoefficient("coefficient field must be strictly positive")
    return d


def normalize_neumann(forcing, mesh):
    """Subtract the volume-weighted mean so the forcing integrates to zero."""
    f = np.asarray(forcing, dtype=float)
    if f.size == 0:
        return f.copy()
    vol = mesh.cell_volumes
    # shifting by f[0] first makes constant fields map to exactly zero
    ref = f[0]
    mean = ref + np.dot(f - ref, vol) / vol.sum()
    return f - mean


def assemble(mesh, bc, forcing, coeff=None, *, pin_cell=None):
    """Assemble the SPD system for ``div(D grad u) = f`` on ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    bc : BoundarySpec
        One entry per mesh patch.
    forcing : array_like
        ``f`` at the cell centroids.
    coeff : array_like or float, optional
        Cell values of ``D``; ``D = 1`` when omitted. Interior faces use the
        harmonic mean of the two adjacent cells, boundary faces the owner value.
    pin_cell : int or False, optional
        Reference cell for all-Neumann problems (default: cell 0). ``False``
        leaves the singular system unpinned.

    Returns
    -------
    LinearSystem
    """
    f = np.asarray(forcing, dtype=float)
    if f.shape != (mesh.n_cells,):
        raise ValueError(f"forcing has shape {f.shape}, expected ({mesh.n_cells},)")
    d = coefficient_values(mesh, coeff)
    is_d, gval = bc.face_arrays(mesh)
    all_neumann = not is_d.any()
    if all_neumann:
        f = normalize_neumann(f, mesh)

    o, nb = mesh.face_owner, mesh.face_neighbor
    d_face = 2.0 * d[o] * d[nb] / (d[o] + d[nb])
    t = d_face * mesh.face_area / mesh.face_distance

    bo = mesh.bface_owner
    d_b = d[bo]
    t_b = d_b * mesh.bface_area / mesh.bface_distance

    n = mesh.n_cells
    diag = np.zeros(n)
    np.add.at(diag, o, t)
    np.add.at(diag, nb, t)
    np.add.at(diag, bo[is_d], t_b[is_d])

    rhs = -f * mesh.cell_volumes
    np.add.at(rhs, bo[is_d], t_b[is_d] * gval[is_d])
    neu = ~is_d
    np.add.at(rhs, bo[neu], d_b[neu] * mesh.bface_area[neu] * gval[neu])

    rows = np.concatenate([np.arange(n), o, nb])
    cols = np.concatenate([np.arange(n), nb, o])
    vals = np.concatenate([diag, -t, -t])
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    matrix.sort_indices()
    system = LinearSystem(matrix, rhs)
    if all_neumann and pin_cell is not False:
        system = pin_reference(system, 0 if pin_cell is None else int(pin_cell))
    return system


def is_singular_laplacian(system, rtol=1e-12):
    """True when constants lie in the null space (no Dirichlet contribution)."""
    row_sums = system.matrix @ np.ones(system.n)
    scale = np.abs(system.diagonal).max()
    return bool(np.abs(row_sums).max() <= rtol * scale)


def pin_reference(system, cell):
    """Replace row and column ``cell`` by an identity row with zero rhs."""
    if system.pinned_cell is not None or not is_singular_laplacian(system):
        raise PinOnDirichletSystem("system is already non-singular; refusing to pin")
    cell = int(cell)
    a = system.matrix.tocoo()
    keep = (a.row != cell) & (a.col != cell)
    rows = np.append(a.row[keep], cell)
    cols = np.append(a.col[keep], cell)
    vals = np.append(a.data[keep], 1.0)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=a.shape)
    matrix.sort_indices()
    rhs = system.rhs.copy()
    rhs[cell] = 0.0
    return LinearSystem(matrix, rhs, cell)
