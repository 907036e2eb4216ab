"""Finite-volume Poisson laboratory: masked-grid meshes, FVM assembly,
Jacobi-preconditioned CG, truncated-solver supervision and boundary control."""

__version__ = "0.1.0"
