"""Forcing-field samplers.

Two distributions are provided: a max-normalized random trigonometric field
used for the 2D/3D Poisson families, and a mean-normalized sum of Gaussian
hot spots used for the thermal-control plate. Both are pure functions of the
cell centroids and the seed.
"""
from dataclasses import dataclass
import math

import numpy as np

from .rng import stream

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigForcingConfig:
    modes_per_axis: int = 10
    bias_mean: float = -1.0
    bias_std: float = 1.0
    eps: float = 1e-8

    def __post_init__(self):
        if self.modes_per_axis < 1:
            raise ValueError("modes_per_axis must be >= 1")


@dataclass(frozen=True)
class HotSpotConfig:
    k_min: int = 2
    k_max: int = 6
    amp_min: float = 0.5
    amp_max: float = 2.0
    width_min: float = 0.02 * TWO_PI
    width_max: float = 0.08 * TWO_PI
    eps: float = 1e-8

    def __post_init__(self):
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError("need 1 <= k_min <= k_max")
        if not (0 < self.amp_min <= self.amp_max):
            raise ValueError("need 0 < amp_min <= amp_max")
        if not (0 < self.width_min <= self.width_max):
            raise ValueError("need 0 < width_min <= width_max")

    @classmethod
    def for_length(cls, L, **kw):
        return cls(width_min=0.02 * L, width_max=0.08 * L, **kw)


def _xyz(mesh):
    pts = np.zeros((mesh.n_cells, 3))
    pts[:, :mesh.dim] = mesh.cell_centroids
    return pts


def trig_coefficients(config, seed):
    """Mode amplitudes ``A``, ``B`` (shape ``(M, M, M)``) and the bias ``c``."""
    M = config.modes_per_axis
    rng = stream(seed, "forcing/trig", M)
    A = rng.standard_normal((M, M, M))
    B = rng.standard_normal((M, M, M))
    c = config.bias_mean + config.bias_std * rng.standard_normal()
    return A, B, float(c)


def sample_trig_forcing(mesh, config=None, seed=0, *, chunk=4096):
    """Random trigonometric forcing scaled to ``max |f| < 1``.

    ``W(x) = sum_{ijk} A_ijk sin(phi) + B_ijk cos(phi)`` with centered integer
    frequencies ``i - M//2`` per axis; 2D meshes use ``z = 0``. The biased
    field ``W + c`` is divided by its maximum magnitude over the mesh cells.
    """
    config = config or TrigForcingConfig()
    M = config.modes_per_axis
    A, B, c = trig_coefficients(config, seed)
    freq = np.arange(M) - M // 2
    kx, ky, kz = np.meshgrid(freq, freq, freq, indexing="ij")
    kvec = np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1).astype(float)
    a, b = A.ravel(), B.ravel()
    pts = _xyz(mesh)
    w = np.empty(mesh.n_cells)
    for start in range(0, mesh.n_cells, chunk):
        phase = pts[start:start + chunk] @ kvec.T
        w[start:start + chunk] = np.sin(phase) @ a + np.cos(phase) @ b
    f0 = w + c
    return f0 / (np.abs(f0).max() + config.eps)


def sample_hotspot_forcing(mesh, config=None, seed=0):
    """Nonnegative sum of Gaussian hot spots scaled to unit sample mean.

    Centers are drawn (with replacement) from the cell centroids taken in
    lexicographic coordinate order, so relabeling the cells permutes the
    output and nothing else.
    """
    if mesh.dim != 2:
        raise ValueError("hot-spot forcing is defined for 2D meshes")
    config = config or HotSpotConfig()
    rng = stream(seed, "forcing/hotspot")
    k = int(rng.integers(config.k_min, config.k_max + 1))
    pts = mesh.cell_centroids
    canonical = np.lexsort((pts[:, 1], pts[:, 0]))
    centers = pts[canonical[rng.integers(0, mesh.n_cells, size=k)]]
    amps = rng.uniform(config.amp_min, config.amp_max, size=k)
    widths = rng.uniform(config.width_min, config.width_max, size=k)
    f0 = np.zeros(mesh.n_cells)
    for mu, amp, s in zip(centers, amps, widths):
        z = (pts - mu) / (s + config.eps)
        f0 += amp * np.exp(-0.5 * (z[:, 0] ** 2 + z[:, 1] ** 2))
    return f0 / (f0.mean() + config.eps)


def hotspot_count(config, seed):
    """Number of hot spots the sampler draws for ``seed``."""
    rng = stream(seed, "forcing/hotspot")
    return int(rng.integers(config.k_min, config.k_max + 1))
