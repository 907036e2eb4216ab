"""Command-line entry point: ``poissonlab <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
Every output gets a ``<out>.manifest.json`` beside it.
"""
import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, io
from .assembly import BoundarySpec, LinearSystem, assemble
from .errors import PoissonLabError
from .geometry import Family, load_geometry, sample_geometry, save_geometry
from .krylov import PCGConfig, energy_norm, f_k, pcg_solve
from .mesh import build_mesh, load_mesh, save_mesh


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _write_manifest(args, out, inputs, start):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    wall = (time.perf_counter() - start) * 1e3
    io.write_json(io.manifest_path(out), io.manifest(args.command, config, inputs, wall))


def _load_bc(args, mesh):
    if args.bc:
        return BoundarySpec.from_dict(io.read_json(args.bc), mesh)
    return BoundarySpec.for_regime(args.regime, mesh, args.bc_seed)


# ---------------------------------------------------------------- commands

def cmd_geometry(args):
    params = json.loads(args.params) if args.params else args.category
    spec = sample_geometry(args.family, params, args.seed, domain_length=args.length,
                           base_resolution=args.resolution)
    save_geometry(spec, args.out)
    return {}


def cmd_mesh(args):
    spec = load_geometry(args.geometry)
    if args.resolution:
        spec = spec.with_resolution(args.resolution)
    mesh = build_mesh(spec)
    save_mesh(mesh, args.out)
    print(f"{mesh.n_cells} cells, {mesh.n_patches} patches")
    return {"geometry": args.geometry}


def cmd_assemble(args):
    mesh = load_mesh(args.mesh)
    bc = _load_bc(args, mesh)
    forcing = io.read_vector(args.forcing)
    coeff = io.read_vector(args.coeff) if args.coeff else None
    system = assemble(mesh, bc, forcing, coeff, pin_cell=args.pin)
    system.save(args.out)
    return {"mesh": args.mesh, "bc": args.bc, "forcing": args.forcing, "coeff": args.coeff}


def cmd_sample_forcing(args):
    from .fields import sample_hotspot_forcing, sample_trig_forcing
    mesh = load_mesh(args.mesh)
    if args.kind == "trig":
        f = sample_trig_forcing(mesh, seed=args.seed)
    else:
        f = sample_hotspot_forcing(mesh, seed=args.seed)
    io.write_vector(args.out, f)
    return {"mesh": args.mesh}


def cmd_solve(args):
    system = LinearSystem.load(args.system)
    u0 = _read_guess(args.u0, system.n) if args.u0 else None
    tol = args.tol * (np.linalg.norm(system.rhs) if args.relative else 1.0)
    u, trace = pcg_solve(system, u0, PCGConfig(args.max_iters, tol),
                         store_iterates=bool(args.reference))
    io.write_vector(args.out, u)
    if args.trace:
        res = trace.residual_norms
        if args.reference:
            ref = io.read_vector(args.reference)
            err = [energy_norm(system, x - ref) for x in trace.iterates]
            io.write_table(args.trace, ["iter", "residual_norm", "energy_error"],
                           [(k, float(res[k]), err[k]) for k in range(len(res))])
        else:
            io.write_table(args.trace, ["iter", "residual_norm"],
                           [(k, float(res[k])) for k in range(len(res))])
    print(f"iterations {trace.iterations_used}, converged {trace.converged}, "
          f"final residual {trace.residual_norms[-1]:.17g}")
    if not trace.converged:
        print("warning: iteration budget exhausted before tolerance", file=sys.stderr)
    return {"system": args.system, "u0": args.u0, "reference": args.reference}


def _read_guess(path, n):
    return np.zeros(n) if path == "zeros" else io.read_vector(path)


def cmd_fk(args):
    system = LinearSystem.load(args.system)
    u = _read_guess(args.u, system.n)
    out = f_k(system, u, args.k)
    io.write_vector(args.out, u - out if args.residual else out)
    return {"system": args.system, "u": args.u}


def cmd_verify(args):
    from .theory import run_battery
    reports, summary = run_battery(args.battery, threads=args.threads)
    io.write_json(args.out, {"summary": summary, "reports": [r.to_dict() for r in reports]})
    for r in reports:
        print(f"{r.theorem_id.value:22s} trials {r.trials:6d}  "
              f"min slack {r.max_violation:.3e}  {'PASS' if r.passed else 'FAIL'}")
    args._exit = 0 if summary["passed"] else 1
    return {}


def _load_instances(root):
    from .surrogate import Instance
    dirs = [root] if os.path.exists(os.path.join(root, "forcing.csv")) else sorted(
        os.path.join(root, d) for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d)))
    out = []
    for d in dirs:
        mesh_file = next((os.path.join(d, n) for n in ("mesh.json", "mesh.npz")
                          if os.path.exists(os.path.join(d, n))), None)
        if mesh_file is None:
            raise UsageError(f"{d}: missing mesh.json or mesh.npz")
        mesh = load_mesh(mesh_file)
        bc_file = os.path.join(d, "bc.json")
        bc = BoundarySpec.from_dict(io.read_json(bc_file) if os.path.exists(bc_file)
                                    else {"regime": "dirichlet"}, mesh)
        forcing = io.read_vector(os.path.join(d, "forcing.csv"))
        out.append(Instance(mesh, bc, forcing, assemble(mesh, bc, forcing)))
    if not out:
        raise UsageError(f"{root}: no instances found")
    return out


def cmd_train(args):
    from .surrogate import (FreeField, SurrogateModel, TrainConfig, n_features,
                            train_safely, tune_learning_rate)
    instances = _load_instances(args.instances)
    cfg = TrainConfig(args.mode, args.k, args.stop_grad, args.lr, args.steps, args.seed)

    def make_model():
        if args.model == "free":
            if len(instances) != 1:
                raise UsageError("--model free needs exactly one instance")
            return FreeField(np.zeros(instances[0].system.n))
        return SurrogateModel(n_features(instances[0].mesh.dim), args.hidden, args.seed)

    out = {}
    if args.lr_grid:
        best, run, finals = tune_learning_rate(make_model, instances, cfg)
        out["lr_grid"] = {repr(k): v for k, v in finals.items()}
        out["best_lr"] = best
    else:
        run = train_safely(make_model(), instances, cfg)
    out.update(run.to_dict())
    io.write_json(args.out, out)
    print(f"final relative L2 error {run.final_rel_error:.6g}")
    return {"instances": args.instances}


def cmd_control(args):
    from . import control
    if args.battery:
        rows, summary = control.run_battery(args.geometries, args.forcings, iters=args.iters,
                                            u_m=args.um, alpha=args.alpha, lr=args.lr,
                                            threads=args.threads)
        io.write_json(args.out, {"summary": summary, "instances": rows})
        print(json.dumps(summary, indent=2))
        return {}
    if not args.geometry:
        raise UsageError("control: --geometry is required unless --battery is given")
    spec = load_geometry(args.geometry)
    prob = control.make_control_problem(spec, args.forcing_seed, u_m=args.um, alpha=args.alpha)
    tau = control.tau_decay(args.um) if args.smooth else None
    res = control.optimize_control(prob, args.iters, args.lr, args.step_rule, tau)
    hist = res.pop("history")
    io.write_json(args.out, {**res, "u_m": args.um, "alpha": args.alpha,
                             "segments": prob.segments})
    rows = [(t, hist["loss"][t], hist["u_max"][t], hist["effort"][t], *hist["c"][t])
            for t in range(len(hist["loss"]))]
    io.write_table(args.out + ".history.csv",
                   ["iter", "loss", "u_max", "effort", "c1", "c2", "c3", "c4"], rows)
    print(f"peak {res['initial_peak']:.6g} -> {res['final_peak']:.6g}, "
          f"success {res['success']}, c = {np.array2string(res['c_opt'], precision=4)}")
    return {"geometry": args.geometry}


def cmd_report(args):
    runs = []
    for p in args.runs:
        d = io.read_json(p)
        d["_source"] = p
        runs.append(d)
    t4, t5, t6 = [], [], []
    for r in runs:
        cfg = r.get("config")
        if not cfg:
            continue
        err = r.get("final_rel_error")
        t4.append((cfg["mode"], cfg["K"], cfg["stop_gradient"], err))
        if cfg["mode"] == "IterativeSupervision" and cfg["stop_gradient"]:
            t5.append((cfg["K"], err))
        cb = r.get("cost_breakdown")
        if cb:
            t6.append((cfg["mode"], cfg["K"], cb["forward_ms"], cb["loss_ms"],
                       cb["backward_ms"], cb["total_ms"], cb["loss_ratio"]))
    base = os.path.splitext(args.out)[0]
    io.write_table(base + ".supervision.csv", ["mode", "K", "stop_gradient", "rel_l2_error"], t4)
    io.write_table(base + ".k_sweep.csv", ["K", "rel_l2_error"], sorted(t5))
    io.write_table(base + ".cost.csv", ["mode", "K", "forward_ms", "loss_ms", "backward_ms",
                                        "total_ms", "loss_ratio"], t6)
    io.write_json(args.out, {"runs": runs, "tables": {"supervision": t4, "k_sweep": t5,
                                                       "cost": t6}})
    return {f"run{i}": p for i, p in enumerate(args.runs)}


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="poissonlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("geometry", help="sample a domain specification")
    g.add_argument("--family", required=True, choices=[f.value for f in Family])
    g.add_argument("--category", type=int)
    g.add_argument("--params", help="JSON object of explicit family parameters")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length", type=float, default=2 * math.pi)
    g.add_argument("--resolution", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_geometry)

    m = sub.add_parser("mesh", help="mesh operations")
    msub = m.add_subparsers(dest="action", parser_class=_Parser)
    msub.required = True
    mb = msub.add_parser("build", help="mesh a geometry on its masked grid")
    mb.add_argument("--geometry", required=True)
    mb.add_argument("--resolution", type=int)
    mb.add_argument("--out", required=True, help=".json or .npz")
    mb.set_defaults(func=cmd_mesh)

    a = sub.add_parser("assemble", help="assemble the linear system")
    a.add_argument("--mesh", required=True)
    a.add_argument("--bc", help="boundary JSON")
    a.add_argument("--regime", default="dirichlet", choices=["dirichlet", "neumann", "random"])
    a.add_argument("--bc-seed", type=int, default=0)
    a.add_argument("--forcing", required=True)
    a.add_argument("--coeff")
    a.add_argument("--pin", type=int)
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_assemble)

    f = sub.add_parser("sample-forcing", help="sample a forcing field")
    f.add_argument("--mesh", required=True)
    f.add_argument("--dist", "--kind", dest="kind", default="trig", choices=["trig", "hotspot"])
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_sample_forcing)

    s = sub.add_parser("solve", help="Jacobi-PCG solve")
    s.add_argument("--system", required=True)
    s.add_argument("--u0", help="initial guess CSV, or 'zeros'")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--relative", action="store_true", help="scale --tol by ||b||")
    s.add_argument("--max-iters", type=int, default=3000)
    s.add_argument("--trace", help="CSV of iter, residual_norm[, energy_error]")
    s.add_argument("--reference", help="exact solution CSV, adds energy errors to the trace")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    k = sub.add_parser("fk", help="apply exactly K PCG steps")
    k.add_argument("--system", required=True)
    k.add_argument("--u", required=True, help="iterate CSV, or 'zeros'")
    k.add_argument("--k", type=int, default=40)
    k.add_argument("--residual", action="store_true", help="write u - F_K(u) instead")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_fk)

    v = sub.add_parser("verify", help="run the theorem battery")
    v.add_argument("--battery", default="default", choices=["default", "quick"])
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--out", default="reports.json")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train a surrogate")
    t.add_argument("--instances", required=True)
    t.add_argument("--mode", default="iter", choices=["iter", "residual", "data"])
    t.add_argument("--k", type=int, default=40)
    t.add_argument("--stop-grad", type=_bool, default=True)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--lr-grid", action="store_true", help="best of the learning-rate grid")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--model", default="mlp", choices=["mlp", "free"])
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("control", help="optimize bottom-boundary controls")
    c.add_argument("--geometry")
    c.add_argument("--forcing-seed", type=int, default=0)
    c.add_argument("--um", type=float, default=25.0)
    c.add_argument("--alpha", type=float, default=0.01)
    c.add_argument("--iters", type=int, default=100)
    c.add_argument("--lr", type=float, default=1.0)
    c.add_argument("--step-rule", default="fixed", choices=["fixed", "diminishing"])
    c.add_argument("--smooth", action="store_true", help="decaying log-sum-exp max")
    c.add_argument("--battery", action="store_true", help="run the 10 x 10 instance battery")
    c.add_argument("--geometries", type=int, default=10)
    c.add_argument("--forcings", type=int, default=10)
    c.add_argument("--threads", type=int, default=1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_control)

    r = sub.add_parser("report", help="merge run JSONs into summary tables")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        inputs = args.func(args) or {}
    except UsageError as exc:
        print(f"poissonlab {args.command}: {exc}", file=sys.stderr)
        return 2
    except (PoissonLabError, ValueError, KeyError, OSError) as exc:
        name = type(exc).__name__
        print(json.dumps({"error": name, "message": str(exc)}), file=sys.stderr)
        return 1
    _write_manifest(args, args.out, inputs, start)
    return getattr(args, "_exit", 0)


if __name__ == "__main__":
    sys.exit(main())
