"""Cell-centered finite-volume meshes on masked Cartesian grids.

A mesh keeps the cells of a uniform ``n^dim`` grid whose centroids lie inside
the domain. Faces between two kept cells are interior faces; faces between a
kept cell and a masked or off-grid cell are boundary faces. Boundary faces are
grouped into patches:

* 1D: one patch per end point.
* 2D: one patch per maximal straight, contiguous run of faces sharing the
  same outward normal.
* 3D: one patch per bounding-box plane, plus one patch per connected
  component of masked cells inside the grid (e.g. the staircase cylinder).

Cells are numbered in row-major order with ``x`` varying fastest.
"""
from dataclasses import dataclass, field
import json

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedDomain, EmptyDomain
from .geometry import GeometrySpec, contains

AXES = "xyz"


@dataclass(eq=False)
class Mesh:
    dim: int
    shape: tuple
    h: float
    cell_ijk: np.ndarray
    cell_centroids: np.ndarray
    cell_volumes: np.ndarray
    face_owner: np.ndarray
    face_neighbor: np.ndarray
    face_area: np.ndarray
    face_distance: np.ndarray
    face_axis: np.ndarray
    bface_owner: np.ndarray
    bface_centroid: np.ndarray
    bface_area: np.ndarray
    bface_distance: np.ndarray
    bface_axis: np.ndarray
    bface_sign: np.ndarray
    bface_patch: np.ndarray
    patches: list = field(default_factory=list)

    @property
    def n_cells(self):
        return len(self.cell_volumes)

    @property
    def n_interior_faces(self):
        return len(self.face_owner)

    @property
    def n_boundary_faces(self):
        return len(self.bface_owner)

    @property
    def n_patches(self):
        return len(self.patches)

    def bface_normals(self):
        n = np.zeros((self.n_boundary_faces, self.dim))
        n[np.arange(self.n_boundary_faces), self.bface_axis] = self.bface_sign
        return n

    def face_normals(self):
        n = np.zeros((self.n_interior_faces, self.dim))
        n[np.arange(self.n_interior_faces), self.face_axis] = 1.0
        return n

    def to_dict(self):
        return {
            "dim": self.dim,
            "shape": list(self.shape),
            "h": self.h,
            "cells": {
                "ijk": self.cell_ijk.tolist(),
                "centroids": self.cell_centroids.tolist(),
                "volumes": self.cell_volumes.tolist(),
            },
            "interior_faces": {
                "owner": self.face_owner.tolist(),
                "neighbor": self.face_neighbor.tolist(),
                "area": self.face_area.tolist(),
                "normal_distance": self.face_distance.tolist(),
                "axis": self.face_axis.tolist(),
            },
            "boundary_faces": {
                "owner": self.bface_owner.tolist(),
                "centroid": self.bface_centroid.tolist(),
                "area": self.bface_area.tolist(),
                "normal_distance": self.bface_distance.tolist(),
                "axis": self.bface_axis.tolist(),
                "sign": self.bface_sign.tolist(),
                "patch_id": self.bface_patch.tolist(),
            },
            "patches": self.patches,
        }

    @classmethod
    def from_dict(cls, d):
        dim = int(d["dim"])
        c, f, b = d["cells"], d["interior_faces"], d["boundary_faces"]

        def ints(x):
            return np.asarray(x, dtype=np.int64)

        def reals(x, cols=None):
            a = np.asarray(x, dtype=float)
            return a.reshape(-1, cols) if cols else a

        return cls(
            dim=dim, shape=tuple(d["shape"]), h=float(d["h"]),
            cell_ijk=ints(c["ijk"]).reshape(-1, dim),
            cell_centroids=reals(c["centroids"], dim),
            cell_volumes=reals(c["volumes"]),
            face_owner=ints(f["owner"]), face_neighbor=ints(f["neighbor"]),
            face_area=reals(f["area"]), face_distance=reals(f["normal_distance"]),
            face_axis=ints(f["axis"]),
            bface_owner=ints(b["owner"]), bface_centroid=reals(b["centroid"], dim),
            bface_area=reals(b["area"]), bface_distance=reals(b["normal_distance"]),
            bface_axis=ints(b["axis"]), bface_sign=reals(b["sign"]),
            bface_patch=ints(b["patch_id"]),
            patches=[dict(p) for p in d["patches"]],
        )


_ARRAY_FIELDS = (
    "cell_ijk", "cell_centroids", "cell_volumes", "face_owner", "face_neighbor",
    "face_area", "face_distance", "face_axis", "bface_owner", "bface_centroid",
    "bface_area", "bface_distance", "bface_axis", "bface_sign", "bface_patch",
)


def save_mesh(mesh, path):
    """Write ``mesh`` as JSON, or as a compressed ``.npz`` sidecar for large meshes."""
    path = str(path)
    if path.endswith(".npz"):
        meta = json.dumps({"dim": mesh.dim, "shape": list(mesh.shape), "h": mesh.h,
                           "patches": mesh.patches})
        np.savez_compressed(path, meta=np.array(meta),
                            **{k: getattr(mesh, k) for k in _ARRAY_FIELDS})
    else:
        with open(path, "w") as fh:
            json.dump(mesh.to_dict(), fh)


def load_mesh(path):
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in _ARRAY_FIELDS}
        return Mesh(dim=meta["dim"], shape=tuple(meta["shape"]), h=float(meta["h"]),
                    patches=meta["patches"], **arrays)
    with open(path) as fh:
        return Mesh.from_dict(json.load(fh))


def build_mesh(spec: GeometrySpec) -> Mesh:
    """Mask the ``base_resolution`` grid of ``spec`` down to a finite-volume mesh."""
    n = spec.base_resolution
    h = spec.cell_width
    centers_1d = (np.arange(n) + 0.5) * h
    grids = np.meshgrid(*([centers_1d] * spec.dim), indexing="ij")
    pts = np.stack(grids, axis=-1)
    mask = contains(spec, pts)
    return grid_mesh(mask, h)


def grid_mesh(mask, h):
    """Build a mesh from a boolean keep-mask indexed ``[ix, iy, iz]``.

    Raises
    ------
    EmptyDomain
        No cell survives masking.
    DisconnectedDomain
        The kept cells form more than one face-connected component.
    """
    mask = np.asarray(mask, dtype=bool)
    dim = mask.ndim
    shape = mask.shape
    h = float(h)
    # row-major with x fastest: order kept cells lexicographically by (iz, iy, ix)
    rev = np.nonzero(mask.transpose(tuple(reversed(range(dim)))))
    ijk = np.stack(rev[::-1], axis=1).astype(np.int64)
    n_cells = len(ijk)
    if n_cells == 0:
        raise EmptyDomain("no cell centroid lies inside the domain")
    index = np.full(shape, -1, dtype=np.int64)
    index[tuple(ijk.T)] = np.arange(n_cells)

    volume = h ** dim
    area = h ** (dim - 1)
    centroids = (ijk + 0.5) * h

    owners, neighbors, axes = [], [], []
    b_owner, b_axis, b_sign = [], [], []
    for a in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[a] = slice(0, shape[a] - 1)
        hi[a] = slice(1, shape[a])
        left, right = index[tuple(lo)], index[tuple(hi)]
        both = (left >= 0) & (right >= 0)
        owners.append(left[both])
        neighbors.append(right[both])
        axes.append(np.full(int(both.sum()), a))

        # pad with masked cells on both ends of axis a
        pad = [(0, 0)] * dim
        pad[a] = (1, 1)
        padded = np.pad(index, pad, constant_values=-1)
        sl_c = [slice(None)] * dim
        sl_m = [slice(None)] * dim
        sl_p = [slice(None)] * dim
        sl_c[a] = slice(1, shape[a] + 1)
        sl_m[a] = slice(0, shape[a])
        sl_p[a] = slice(2, shape[a] + 2)
        cur, minus, plus = padded[tuple(sl_c)], padded[tuple(sl_m)], padded[tuple(sl_p)]
        for sign, other in ((-1.0, minus), (1.0, plus)):
            sel = (cur >= 0) & (other < 0)
            cells = cur[sel]
            b_owner.append(cells)
            b_axis.append(np.full(len(cells), a))
            b_sign.append(np.full(len(cells), sign))

    face_owner = np.concatenate(owners)
    face_neighbor = np.concatenate(neighbors)
    face_axis = np.concatenate(axes)
    order = np.lexsort((face_neighbor, face_owner))
    face_owner, face_neighbor, face_axis = face_owner[order], face_neighbor[order], face_axis[order]

    bface_owner = np.concatenate(b_owner)
    bface_axis = np.concatenate(b_axis)
    bface_sign = np.concatenate(b_sign)
    order = np.lexsort((bface_sign, bface_axis, bface_owner))
    bface_owner, bface_axis, bface_sign = bface_owner[order], bface_axis[order], bface_sign[order]
    n_b = len(bface_owner)
    bface_centroid = centroids[bface_owner].copy()
    bface_centroid[np.arange(n_b), bface_axis] += 0.5 * h * bface_sign

    if n_cells > 1:
        adj = coo_matrix((np.ones(len(face_owner)), (face_owner, face_neighbor)),
                         shape=(n_cells, n_cells))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp > 1:
            raise DisconnectedDomain(f"kept cells form {n_comp} components")

    bface_patch, patches = _build_patches(mask, ijk, bface_owner, bface_axis, bface_sign,
                                          bface_centroid, h)

    return Mesh(
        dim=dim, shape=tuple(shape), h=h, cell_ijk=ijk, cell_centroids=centroids,
        cell_volumes=np.full(n_cells, volume),
        face_owner=face_owner, face_neighbor=face_neighbor,
        face_area=np.full(len(face_owner), area), face_distance=np.full(len(face_owner), h),
        face_axis=face_axis,
        bface_owner=bface_owner, bface_centroid=bface_centroid,
        bface_area=np.full(n_b, area), bface_distance=np.full(n_b, 0.5 * h),
        bface_axis=bface_axis, bface_sign=bface_sign, bface_patch=bface_patch,
        patches=patches,
    )


def _build_patches(mask, ijk, owner, axis, sign, centroid, h):
    dim = mask.ndim
    shape = mask.shape
    cell = ijk[owner]
    across = cell.copy()
    across[np.arange(len(owner)), axis] += sign.astype(np.int64)
    outer = np.any((across < 0) | (across >= np.asarray(shape)), axis=1)

    groups = []  # (sort key, label info, face indices)
    if dim == 3:
        labels, _ = ndimage.label(~mask)
        for a in range(3):
            for s in (-1.0, 1.0):
                sel = np.nonzero(outer & (axis == a) & (sign == s))[0]
                if len(sel):
                    side = "min" if s < 0 else "max"
                    groups.append(((0, a, s, 0, 0), {"kind": "outer", "axis": a, "sign": s,
                                   "label": f"{AXES[a]}-{side}"}, sel))
        inner = np.nonzero(~outer)[0]
        comp = labels[tuple(across[inner].T)]
        for c in np.unique(comp):
            sel = inner[comp == c]
            groups.append(((1, 0, 0, int(c), 0), {"kind": "inner", "label": f"cavity-{int(c)}"}, sel))
    else:
        for a in range(dim):
            for s in (-1.0, 1.0):
                sel_as = np.nonzero((axis == a) & (sign == s))[0]
                if not len(sel_as):
                    continue
                plane = cell[sel_as, a]
                if dim == 1:
                    tang = np.zeros(len(sel_as), dtype=np.int64)
                else:
                    tang = cell[sel_as, 1 - a]
                kind = outer[sel_as]
                order = np.lexsort((tang, plane, kind))
                sel_as, plane, tang, kind = sel_as[order], plane[order], tang[order], kind[order]
                breaks = np.nonzero((np.diff(plane) != 0) | (np.diff(tang) != 1)
                                    | (np.diff(kind.astype(int)) != 0))[0] + 1
                for run in np.split(np.arange(len(sel_as)), breaks):
                    faces = sel_as[run]
                    is_outer = bool(kind[run[0]])
                    pos = float(centroid[faces[0], a])
                    info = {"kind": "outer" if is_outer else "inner", "axis": a, "sign": s,
                            "label": _segment_label(a, s, pos, centroid[faces], h, dim)}
                    key = (0 if is_outer else 1, a, s, int(plane[run[0]]), int(tang[run[0]]))
                    groups.append((key, info, faces))

    groups.sort(key=lambda g: g[0])
    patch_of = np.empty(len(owner), dtype=np.int64)
    patches = []
    for pid, (_, info, faces) in enumerate(groups):
        patch_of[faces] = pid
        entry = {"patch_id": pid}
        entry.update(info)
        patches.append(entry)
    return patch_of, patches


def _segment_label(a, s, pos, pts, h, dim):
    side = "-" if s < 0 else "+"
    if dim == 1:
        return f"{AXES[a]}{side} at {AXES[a]}={pos:.6g}"
    t = 1 - a
    lo = pts[:, t].min() - 0.5 * h
    hi = pts[:, t].max() + 0.5 * h
    return f"{AXES[a]}{side} at {AXES[a]}={pos:.6g}, {AXES[t]} in [{lo:.6g}, {hi:.6g}]"


def patch_segments(mesh):
    """Partition of boundary faces by patch: ``[{"patch_id", "faces"}, ...]``."""
    order = np.argsort(mesh.bface_patch, kind="stable")
    bounds = np.searchsorted(mesh.bface_patch[order], np.arange(mesh.n_patches + 1))
    return [{"patch_id": p["patch_id"], "label": p["label"],
             "faces": order[bounds[i]:bounds[i + 1]]}
            for i, p in enumerate(mesh.patches)]


def interval_mesh(n_cells, length=1.0):
    """Uniform 1D mesh on ``[0, length]``; used for hand-checkable tests."""
    return grid_mesh(np.ones(n_cells, dtype=bool), length / n_cells)


def find_patches(mesh, *, kind=None, axis=None, sign=None):
    out = []
    for p in mesh.patches:
        if kind is not None and p.get("kind") != kind:
            continue
        if axis is not None and p.get("axis") != axis:
            continue
        if sign is not None and p.get("sign") != sign:
            continue
        out.append(p["patch_id"])
    return out


def split_patch(mesh, patch_id, n_parts):
    """Split one straight 2D patch into ``n_parts`` equal-length pieces.

    Faces are assigned by the position of their centroid along the patch, so
    the pieces are contiguous and have near-equal face counts. Returns a new
    mesh; the new patches are appended after the existing ones and the split
    patch keeps its id for the first piece.
    """
    info = mesh.patches[patch_id]
    if mesh.dim != 2 or "axis" not in info:
        raise ValueError("split_patch needs a straight 2D patch")
    t = 1 - info["axis"]
    faces = np.nonzero(mesh.bface_patch == patch_id)[0]
    coords = mesh.bface_centroid[faces, t]
    lo = coords.min() - 0.5 * mesh.h
    hi = coords.max() + 0.5 * mesh.h
    part = np.minimum(((coords - lo) / (hi - lo) * n_parts).astype(int), n_parts - 1)

    new_patch = mesh.bface_patch.copy()
    patches = [dict(p) for p in mesh.patches]
    ids = [patch_id]
    for k in range(1, n_parts):
        ids.append(len(patches))
        patches.append(dict(info, patch_id=len(patches)))
    for k, pid in enumerate(ids):
        sel = faces[part == k]
        new_patch[sel] = pid
        e0 = lo + (hi - lo) * k / n_parts
        e1 = lo + (hi - lo) * (k + 1) / n_parts
        patches[pid]["label"] = f"{info['label']} part {k + 1}/{n_parts} [{e0:.6g}, {e1:.6g}]"
    kw = {f: getattr(mesh, f) for f in _ARRAY_FIELDS}
    kw["bface_patch"] = new_patch
    return Mesh(dim=mesh.dim, shape=mesh.shape, h=mesh.h, patches=patches, **kw), ids
