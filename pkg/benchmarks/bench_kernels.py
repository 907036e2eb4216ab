"""Compare the compiled and pure-Python PCG kernels.

Usage::

    python benchmarks/bench_kernels.py --resolutions 32 64 128 --k 40 --repeat 5
"""
import argparse
import json
import timeit

import numpy as np

from poissonlab import kernels
from poissonlab.assembly import BoundarySpec, assemble
from poissonlab.fields import sample_trig_forcing
from poissonlab.geometry import Family, sample_geometry
from poissonlab.krylov import PCGConfig, f_k, pcg_solve
from poissonlab.mesh import build_mesh


def make_system(n, category):
    mesh = build_mesh(sample_geometry(Family.CORNER_REMOVED_SQUARE, category, 0, base_resolution=n))
    f = sample_trig_forcing(mesh, seed=0)
    return assemble(mesh, BoundarySpec.all_dirichlet(mesh), f)


def bench(system, K, repeat):
    u0 = np.zeros(system.n)
    cfg = PCGConfig(max_iters=5000, abs_tol=1e-8)
    pcg_solve(system, config=cfg)  # warm the CSR cache
    out = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            solve = min(timeit.repeat(lambda: pcg_solve(system, config=cfg), number=1, repeat=repeat))
            fk = min(timeit.repeat(lambda: f_k(system, u0, K), number=1, repeat=repeat))
        finally:
            kernels.set_backend(prev)
        out[name] = {"solve_ms": 1e3 * solve, "f_k_ms": 1e3 * fk}
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolutions", type=int, nargs="+", default=[32, 64, 128])
    p.add_argument("--category", type=int, default=4)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results here")
    args = p.parse_args(argv)

    rows = []
    print(f"{'res':>5} {'cells':>7} {'backend':>8} {'solve ms':>10} {'F_K ms':>9} {'speedup':>8}")
    for n in args.resolutions:
        system = make_system(n, args.category)
        res = bench(system, args.k, args.repeat)
        base = res["python"]["solve_ms"]
        for name, t in res.items():
            print(f"{n:5d} {system.n:7d} {name:>8} {t['solve_ms']:10.2f} {t['f_k_ms']:9.3f} "
                  f"{base / t['solve_ms']:7.1f}x")
            rows.append({"resolution": n, "cells": system.n, "backend": name, **t})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
