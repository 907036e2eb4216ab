"""Parametric domain families.

Three families are supported, all living in ``[0, L]^dim``:

``CornerRemovedSquare``
    The unit square scaled to ``L`` with ``k`` axis-aligned rectangles cut out
    of its corners (category ``Ck``).
``CubeWithCylindricalHole``
    The cube ``[0, L]^3`` minus a z-aligned cylinder spanning the full height.
``PerforatedPlate``
    The square minus one interior rectangular cavity.
"""
from dataclasses import dataclass, field
import enum
import json
import math

import numpy as np

from .errors import InvalidGeometry
from .rng import stream

TWO_PI = 2.0 * math.pi

CORNERS = ("lower_left", "lower_right", "upper_left", "upper_right")


class Family(str, enum.Enum):
    CORNER_REMOVED_SQUARE = "CornerRemovedSquare"
    CUBE_WITH_CYLINDRICAL_HOLE = "CubeWithCylindricalHole"
    PERFORATED_PLATE = "PerforatedPlate"

    @property
    def dim(self):
        return 3 if self is Family.CUBE_WITH_CYLINDRICAL_HOLE else 2


DEFAULT_RESOLUTION = {
    Family.CORNER_REMOVED_SQUARE: 128,
    Family.CUBE_WITH_CYLINDRICAL_HOLE: 48,
    Family.PERFORATED_PLATE: 128,
}


@dataclass(frozen=True)
class GeometrySpec:
    family: Family
    domain_length: float
    base_resolution: int
    params: dict = field(hash=False)
    seed: int = 0

    @property
    def dim(self):
        return self.family.dim

    @property
    def cell_width(self):
        return self.domain_length / self.base_resolution

    def with_resolution(self, base_resolution):
        spec = GeometrySpec(self.family, self.domain_length, int(base_resolution),
                            self.params, self.seed)
        validate(spec)
        return spec

    def to_dict(self):
        return {
            "family": self.family.value,
            "domain_length": self.domain_length,
            "base_resolution": self.base_resolution,
            "params": self.params,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        spec = cls(Family(data["family"]), float(data["domain_length"]),
                   int(data["base_resolution"]), data["params"], int(data.get("seed", 0)))
        validate(spec)
        return spec

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _check_range(name, value, lo, hi):
    # small slack so values written to JSON and read back still validate
    tol = 1e-12 * max(abs(lo), abs(hi), 1.0)
    if not (lo - tol <= value <= hi + tol):
        raise InvalidGeometry(f"{name}={value!r} outside [{lo!r}, {hi!r}]")


def validate(spec):
    """Raise :class:`InvalidGeometry` unless ``spec`` satisfies its family invariants."""
    L = spec.domain_length
    if not (L > 0 and math.isfinite(L)):
        raise InvalidGeometry(f"domain_length must be positive, got {L!r}")
    if spec.base_resolution < 1:
        raise InvalidGeometry("base_resolution must be a positive integer")
    p = spec.params
    if spec.family is Family.CORNER_REMOVED_SQUARE:
        k = p.get("category")
        if k not in (0, 1, 2, 3, 4):
            raise InvalidGeometry(f"category must be in 0..4, got {k!r}")
        rects = p.get("corners", [])
        if len(rects) != k:
            raise InvalidGeometry(f"category {k} needs {k} corner rectangles, got {len(rects)}")
        seen = set()
        for r in rects:
            if r["corner"] not in CORNERS or r["corner"] in seen:
                raise InvalidGeometry(f"bad or repeated corner {r['corner']!r}")
            seen.add(r["corner"])
            _check_range("width", r["width"], 0.1 * L, 0.4 * L)
            _check_range("height", r["height"], 0.1 * L, 0.4 * L)
    elif spec.family is Family.CUBE_WITH_CYLINDRICAL_HOLE:
        d = p["diameter"]
        _check_range("diameter", d, 0.1 * L, 0.3 * L)
        r = 0.5 * d
        for name, c in zip(("center_x", "center_y"), p["center"]):
            _check_range(name, c, r, L - r)
    elif spec.family is Family.PERFORATED_PLATE:
        w, h = p["width"], p["height"]
        _check_range("width", w, 0.1 * L, 0.4 * L)
        _check_range("height", h, 0.1 * L, 0.4 * L)
        cx, cy = p["center"]
        _check_range("center_x", cx, 0.5 * w, L - 0.5 * w)
        _check_range("center_y", cy, 0.5 * h, L - 0.5 * h)
    else:  # pragma: no cover
        raise InvalidGeometry(f"unknown family {spec.family!r}")
    return spec


def sample_geometry(family, category_or_params=None, seed=0, *,
                    domain_length=TWO_PI, base_resolution=None):
    """Draw one member of a domain family.

    Parameters
    ----------
    family : Family or str
    category_or_params : int, dict or None
        For ``CornerRemovedSquare`` an integer category ``k`` (or
        ``{"category": k}``). A dict holding the full family parameters is
        taken as an explicit override and validated instead of sampled.
    seed : int
        64-bit unsigned seed. Equal arguments give identical specs.

    Notes
    -----
    Corner categories are nested for a fixed seed: ``C(k+1)`` removes every
    rectangle of ``C(k)`` plus one more, with identical sizes. This makes the
    cell count non-increasing in ``k`` seed by seed.
    """
    family = Family(family)
    L = float(domain_length)
    res = DEFAULT_RESOLUTION[family] if base_resolution is None else int(base_resolution)
    params = category_or_params
    if isinstance(params, dict) and _is_full_override(family, params):
        return validate(GeometrySpec(family, L, res, params, int(seed)))

    if family is Family.CORNER_REMOVED_SQUARE:
        k = params["category"] if isinstance(params, dict) else params
        if k is None:
            k = 0
        if k not in (0, 1, 2, 3, 4):
            raise InvalidGeometry(f"category must be in 0..4, got {k!r}")
        rng = stream(seed, "geometry/corner-removed-square")
        order = rng.permutation(4)
        sizes = rng.uniform(0.1 * L, 0.4 * L, size=(4, 2))
        chosen = sorted(int(c) for c in order[:k])
        corners = [{"corner": CORNERS[c], "width": float(sizes[c, 0]),
                    "height": float(sizes[c, 1])} for c in chosen]
        p = {"category": int(k), "corners": corners}
    elif family is Family.CUBE_WITH_CYLINDRICAL_HOLE:
        rng = stream(seed, "geometry/cube-with-cylindrical-hole")
        d = float(rng.uniform(0.1 * L, 0.3 * L))
        r = 0.5 * d
        center = [float(c) for c in rng.uniform(r, L - r, size=2)]
        p = {"diameter": d, "center": center}
    else:
        rng = stream(seed, "geometry/perforated-plate")
        w, h = (float(v) for v in rng.uniform(0.1 * L, 0.4 * L, size=2))
        center = [float(rng.uniform(0.5 * w, L - 0.5 * w)),
                  float(rng.uniform(0.5 * h, L - 0.5 * h))]
        p = {"width": w, "height": h, "center": center}
    return validate(GeometrySpec(family, L, res, p, int(seed)))


def _is_full_override(family, params):
    if family is Family.CORNER_REMOVED_SQUARE:
        return "corners" in params
    if family is Family.CUBE_WITH_CYLINDRICAL_HOLE:
        return "diameter" in params
    return "width" in params


def _corner_box(name, w, h, L):
    x0, x1 = (0.0, w) if name.endswith("left") else (L - w, L)
    y0, y1 = (0.0, h) if name.startswith("lower") else (L - h, L)
    return x0, x1, y0, y1


def removed_boxes(spec):
    """Axis-aligned boxes ``(x0, x1, y0, y1)`` subtracted from a 2D domain."""
    L = spec.domain_length
    if spec.family is Family.CORNER_REMOVED_SQUARE:
        return [_corner_box(r["corner"], r["width"], r["height"], L)
                for r in spec.params["corners"]]
    if spec.family is Family.PERFORATED_PLATE:
        w, h = spec.params["width"], spec.params["height"]
        cx, cy = spec.params["center"]
        return [(cx - 0.5 * w, cx + 0.5 * w, cy - 0.5 * h, cy + 0.5 * h)]
    return []


def contains(spec, point):
    """Point-in-domain test.

    ``point`` is a coordinate or an array of coordinates with trailing axis of
    length ``spec.dim``; the result has the matching leading shape. Subtracted
    shapes are treated as closed sets, so points on their boundary are outside.
    """
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1] != spec.dim:
        raise ValueError(f"expected {spec.dim}-d points, got shape {pts.shape}")
    L = spec.domain_length
    inside = np.all((pts > 0.0) & (pts < L), axis=-1)
    x, y = pts[..., 0], pts[..., 1]
    if spec.family is Family.CUBE_WITH_CYLINDRICAL_HOLE:
        cx, cy = spec.params["center"]
        r = 0.5 * spec.params["diameter"]
        inside &= (x - cx) ** 2 + (y - cy) ** 2 > r * r
    else:
        for x0, x1, y0, y1 in removed_boxes(spec):
            inside &= ~((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1))
    if inside.ndim == 0:
        return bool(inside)
    return inside


def exact_measure(spec):
    """Analytic area (2D) or volume (3D) of the domain."""
    L = spec.domain_length
    if spec.family is Family.CUBE_WITH_CYLINDRICAL_HOLE:
        r = 0.5 * spec.params["diameter"]
        return L ** 3 - math.pi * r * r * L
    return L * L - sum((x1 - x0) * (y1 - y0) for x0, x1, y0, y1 in removed_boxes(spec))


def load_geometry(path):
    with open(path) as fh:
        return GeometrySpec.from_json(fh.read())


def save_geometry(spec, path):
    with open(path, "w") as fh:
        fh.write(spec.to_json())
        fh.write("\n")
