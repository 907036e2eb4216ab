"""Numerical certification of the PCG-K fixed-point, contraction and
error-proxy results, and of the lemmas they rest on.

Every check turns an inequality ``lhs <= rhs`` into a dimensionless slack
(positive when it holds) and reports the most negative slack across trials.
A report passes when that value is at least ``-TOLERANCE``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import enum
import math
import time

import numpy as np
import scipy.linalg

from .assembly import BoundarySpec, assemble
from .errors import UnstableDynamics
from .fields import sample_trig_forcing
from .geometry import Family, sample_geometry
from .krylov import (PCGConfig, SpectralEstimate, dense_spectrum, energy_norm,
                     estimate_spectrum, f_k, pcg_solve, preconditioned_dense)
from .mesh import build_mesh, grid_mesh
from .rng import stream

TOLERANCE = 1e-10
# below this fraction of the initial error, errors are dominated by the
# rounding in the reference solution and per-step ratios are not meaningful
ERROR_FLOOR = 1e-8


class TheoremId(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    STOP_GRAD_CONTRACTION = "StopGradContraction"
    ERROR_PROXY = "ErrorProxy"
    RESIDUAL_BOUNDS = "ResidualBounds"
    NORM_EQUIVALENCE = "NormEquivalence"
    KANTOROVICH = "Kantorovich"
    STEEPEST_DESCENT = "SteepestDescent"
    PCGK_CONTRACTION = "PCGKContraction"
    LOCAL_EXPANSION = "LocalExpansion"


@dataclass
class TheoremReport:
    theorem_id: TheoremId
    trials: int = 0
    max_violation: float = math.inf
    passed: bool = True
    details: dict = field(default_factory=dict)

    def record(self, slack):
        self.trials += 1
        slack = float(slack)
        if math.isnan(slack):
            slack = -math.inf
        if slack < self.max_violation:
            self.max_violation = slack
        self.passed = self.max_violation >= -TOLERANCE
        return slack

    def merge(self, other):
        self.trials += other.trials
        self.max_violation = min(self.max_violation, other.max_violation)
        self.passed = self.passed and other.passed
        return self

    def to_dict(self):
        d = asdict(self)
        d["theorem_id"] = self.theorem_id.value
        if math.isinf(d["max_violation"]):
            d["max_violation"] = None
        return d


@dataclass
class Reference:
    """Exact quantities for one system: dense solution and spectra."""
    system: object
    u_star: np.ndarray
    lam_min_A: float
    lam_max_A: float
    spectrum: SpectralEstimate
    preconditioner: object = None
    dense_C: np.ndarray = None

    @property
    def rho(self):
        return self.spectrum.rho

    def error_A(self, u):
        return energy_norm(self.system, u - self.u_star)


def reference(system, preconditioner=None, dense_limit=5000):
    """Dense solve and eigensolves for ``n <= dense_limit``; Lanczos otherwise.

    Large systems get ``kappa`` inflated by 1% so ``rho`` is not
    underestimated.
    """
    n = system.n
    if n <= dense_limit:
        a = system.matrix.toarray()
        u = scipy.linalg.solve(a, system.rhs, assume_a="pos")
        # one step of refinement
        u += scipy.linalg.solve(a, system.rhs - a @ u, assume_a="pos")
        ev = scipy.linalg.eigvalsh(a)
        c = preconditioned_dense(system, preconditioner)
        evc = scipy.linalg.eigvalsh(c)
        spec = SpectralEstimate.from_extremes(evc[0], evc[-1])
        return Reference(system, u, float(ev[0]), float(ev[-1]), spec, preconditioner, c)
    bnorm = float(np.linalg.norm(system.rhs))
    u, trace = pcg_solve(system, config=PCGConfig(max_iters=100000, abs_tol=1e-12 * bnorm),
                         preconditioner=preconditioner)
    spec_a = estimate_spectrum(system, preconditioner=1.0)
    spec = estimate_spectrum(system, preconditioner=preconditioner).inflated(1.01)
    return Reference(system, u, spec_a.lambda_min / 1.01, spec_a.lambda_max * 1.01, spec,
                     preconditioner)


def _random_vector(seed, tag, trial, n):
    return stream(seed, tag, trial).standard_normal(n)


def check_fixed_point(system, trials=20, seed=0, K_list=(1, 5, 20, 40), ref=None):
    """``F_K(u) = u`` exactly at solutions, and ``s_K(u) != 0`` elsewhere."""
    ref = ref or reference(system)
    rep = TheoremReport(TheoremId.FIXED_POINT)
    pre = ref.preconditioner
    scale = max(np.linalg.norm(ref.u_star), np.finfo(float).tiny)
    fwd, rev = [], []
    for K in K_list:
        s = ref.u_star - f_k(system, ref.u_star, K, preconditioner=pre)
        fwd.append(rep.record(-np.linalg.norm(s) / scale))
    for t in range(trials):
        u = _random_vector(seed, "theory/fixed-point", t, system.n)
        if t == 0:
            u = ref.u_star.copy()
            u[0] += 1e-3
        for K in K_list:
            s = u - f_k(system, u, K, preconditioner=pre)
            ratio = np.linalg.norm(s) / np.linalg.norm(u - ref.u_star)
            rev.append(ratio)
            rep.record(0.0 if ratio > 0 else -1.0)
    rep.details = {"max_forward_rel_sk": float(-min(fwd)), "min_reverse_ratio": float(min(rev))}
    return rep


def relaxed_iteration(system, u0, eta, K, T, preconditioner=None):
    """``u <- u - eta * s_K(u)`` for ``T`` steps; returns all iterates."""
    us = [np.asarray(u0, dtype=float)]
    u = us[0]
    for _ in range(T):
        s = u - f_k(system, u, K, preconditioner=preconditioner)
        u = u - eta * s
        us.append(u)
    return us


def check_stop_grad_contraction(system, eta, K, T, seed=0, trials=1, ref=None):
    """Per-step energy-error ratio of the relaxed iteration vs ``1 - eta(1 - rho^K)``."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    ref = ref or reference(system)
    rep = TheoremReport(TheoremId.STOP_GRAD_CONTRACTION)
    bound = 1.0 - eta * (1.0 - ref.rho ** K)
    worst, skipped = -math.inf, 0
    for t in range(trials):
        u0 = _random_vector(seed, "theory/stop-grad", t, system.n)
        errs = [ref.error_A(u) for u in relaxed_iteration(system, u0, eta, K, T,
                                                          ref.preconditioner)]
        floor = ERROR_FLOOR * max(errs[0], energy_norm(system, ref.u_star))
        for e0, e1 in zip(errs[:-1], errs[1:]):
            if e0 <= floor:
                skipped += 1
                continue
            ratio = e1 / e0
            worst = max(worst, ratio)
            rep.record(bound - ratio)
    rep.details = {"eta": eta, "K": K, "T": T, "bound": bound, "max_ratio": worst,
                   "steps_below_floor": skipped}
    return rep


def check_error_proxy(system, K_list=(1, 5, 20, 40), trials=20, seed=0, ref=None):
    """Both error-proxy reports: ``s_K`` bounds and residual bounds.

    Returns ``(error_proxy_report, residual_bounds_report)``.
    """
    ref = ref or reference(system)
    proxy = TheoremReport(TheoremId.ERROR_PROXY)
    resid = TheoremReport(TheoremId.RESIDUAL_BOUNDS)
    a = system.matrix
    for t in range(trials):
        u = _random_vector(seed, "theory/error-proxy", t, system.n)
        e = ref.error_A(u)
        r = a @ u - system.rhs
        q = energy_norm(system, r) / e
        resid.record(min(q / ref.lam_min_A - 1.0, 1.0 - q / ref.lam_max_A))
        for K in K_list:
            s = u - f_k(system, u, K, preconditioner=ref.preconditioner)
            ratio = energy_norm(system, s) / e
            rk = ref.rho ** K
            proxy.record(min(ratio - (1.0 - rk), (1.0 + rk) - ratio))
    return proxy, resid


def check_pcgk_contraction(system, K_list=(1, 5, 20, 40), trials=20, seed=0, ref=None):
    """``||F_K(u) - u*||_A <= rho^K ||u - u*||_A``."""
    ref = ref or reference(system)
    rep = TheoremReport(TheoremId.PCGK_CONTRACTION)
    for t in range(trials):
        u = _random_vector(seed, "theory/pcgk", t, system.n)
        e = ref.error_A(u)
        for K in K_list:
            ek = ref.error_A(f_k(system, u, K, preconditioner=ref.preconditioner))
            rep.record(ref.rho ** K - ek / e)
    return rep


def _sqrt_m(system, preconditioner):
    if preconditioner is None:
        return np.sqrt(system.diagonal)
    return np.sqrt(np.broadcast_to(np.asarray(preconditioner, dtype=float), (system.n,)))


def check_norm_equivalence(system, trials=20, seed=0, ref=None):
    """``||u - u*||_A = ||y - y*||_C`` with ``y = M^{1/2} u``, and ``C y* = M^{-1/2} b``."""
    ref = ref or reference(system)
    rep = TheoremReport(TheoremId.NORM_EQUIVALENCE)
    c = ref.dense_C if ref.dense_C is not None else preconditioned_dense(system, ref.preconditioner)
    ms = _sqrt_m(system, ref.preconditioner)
    y_star = ms * ref.u_star
    d = system.rhs / ms
    rep.record(-np.linalg.norm(c @ y_star - d) / max(np.linalg.norm(d), 1e-300)
               / np.linalg.cond(c))
    worst = 0.0
    for t in range(trials):
        u = _random_vector(seed, "theory/norm-equivalence", t, system.n)
        ea = ref.error_A(u)
        dy = ms * u - y_star
        ec = math.sqrt(max(dy @ (c @ dy), 0.0))
        rel = abs(ea - ec) / ea
        worst = max(worst, rel)
        rep.record(-rel)
    rep.details = {"max_relative_difference": worst}
    return rep


def kantorovich_slack(c, x, c_inv_x, kappa):
    xx = x @ x
    lhs = (x @ (c @ x)) * (x @ c_inv_x)
    rhs = (kappa + 1.0) ** 2 / (4.0 * kappa) * xx * xx
    return 1.0 - lhs / rhs


def steepest_descent_ratio(c, e):
    """Energy-norm ratio after one exact line-search step on ``C y = d``."""
    r = -(c @ e)
    rr = r @ r
    if rr == 0.0:
        return 0.0
    alpha = rr / (r @ (c @ r))
    e_new = e + alpha * r
    return math.sqrt(max(e_new @ (c @ e_new), 0.0) / (e @ (c @ e)))


def _dense_checks(c, evals, n_trials, seed, tag):
    kant = TheoremReport(TheoremId.KANTOROVICH)
    sd = TheoremReport(TheoremId.STEEPEST_DESCENT)
    lo, hi = evals[0], evals[-1]
    kappa = hi / lo
    rho = (kappa - 1.0) / (kappa + 1.0)
    chol = scipy.linalg.cho_factor(c)
    for t in range(n_trials):
        x = _random_vector(seed, tag + "/kantorovich", t, len(c))
        kant.record(kantorovich_slack(c, x, scipy.linalg.cho_solve(chol, x), kappa))
        e = _random_vector(seed, tag + "/steepest-descent", t, len(c))
        sd.record(rho - steepest_descent_ratio(c, e))
    return kant, sd


def random_spd(rng, n, log_kappa_max=6.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.sort(10.0 ** rng.uniform(0.0, log_kappa_max, size=n))
    evals /= evals[0]
    c = (q * evals) @ q.T
    return 0.5 * (c + c.T), evals


def check_synthetic_lemmas(pairs=1000, max_size=50, seed=0):
    """Kantorovich and one-step steepest descent on random small SPD matrices.

    Half of the vectors are drawn from the extreme eigenvectors, where both
    inequalities are nearly tight.
    """
    kant = TheoremReport(TheoremId.KANTOROVICH)
    sd = TheoremReport(TheoremId.STEEPEST_DESCENT)
    for t in range(pairs):
        rng = stream(seed, "theory/synthetic", t)
        n = int(rng.integers(2, max_size + 1))
        c, _ = random_spd(rng, n)
        evals, vecs = np.linalg.eigh(c)
        lo, hi = evals[0], evals[-1]
        kappa = hi / lo
        rho = (kappa - 1.0) / (kappa + 1.0)
        if t % 2:
            x = vecs[:, 0] * math.sqrt(hi) + vecs[:, -1] * math.sqrt(lo)
            x += 1e-3 * rng.standard_normal(n)
        else:
            x = rng.standard_normal(n)
        kant.record(kantorovich_slack(c, x, np.linalg.solve(c, x), kappa))
        if t % 2:
            e = vecs[:, 0] / lo + vecs[:, -1] / hi
            e += 1e-3 * rng.standard_normal(n)
        else:
            e = rng.standard_normal(n)
        sd.record(rho - steepest_descent_ratio(c, e))
    return kant, sd


def richardson_map(system, u, omega, preconditioner=None):
    """``F(u) = u - omega M^{-1} (A u - b)``."""
    m = system.diagonal if preconditioner is None else preconditioner
    return u - omega * (system.matrix @ u - system.rhs) / m


def _measure_rate(step, u0, burn, window):
    u = u0 / np.linalg.norm(u0)
    logs = []
    for t in range(burn + window):
        u = step(u)
        nrm = np.linalg.norm(u)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise UnstableDynamics(f"iterate norm became {nrm} at step {t}")
        if t >= burn:
            logs.append(math.log(nrm))
        u = u / nrm
    return math.exp(float(np.mean(logs)))


def check_local_expansion(omega, system, eta, trials=1, *, preconditioner=None,
                          burn=2000, window=1000, seed=0):
    """Measured linear rates of stop-gradient and full-gradient dynamics.

    Uses the one-step Richardson map, whose Jacobian ``J = I - omega M^{-1} A``
    is exact, so both dynamics are linear in the error. They are run on the
    homogeneous system (``b = 0``, ``u* = 0``) with renormalization, which
    leaves the error dynamics unchanged and avoids the rounding floor.
    """
    rep = TheoremReport(TheoremId.LOCAL_EXPANSION)
    n = system.n
    m = system.diagonal if preconditioner is None else np.broadcast_to(
        np.asarray(preconditioner, dtype=float), (n,))
    a = system.matrix.toarray()
    i_minus_j = omega * a / m[:, None]
    g_sg = np.eye(n) - eta * i_minus_j
    g_fg = np.eye(n) - eta * i_minus_j.T @ i_minus_j
    pred_sg = float(np.abs(np.linalg.eigvals(g_sg)).max())
    pred_fg = float(np.abs(scipy.linalg.eigvalsh(g_fg)).max())
    homog = system.with_rhs(np.zeros(n))

    def sg_step(u):
        return u - eta * (u - richardson_map(homog, u, omega, m))

    def fg_step(u):
        s = u - richardson_map(homog, u, omega, m)
        return u - eta * (omega * (homog.matrix @ (s / m)))

    norm_ij = float(np.linalg.norm(i_minus_j, 2))
    meas = []
    for t in range(trials):
        u0 = _random_vector(seed, "theory/local-expansion", t, n)
        r_sg = _measure_rate(sg_step, u0, burn, window)
        r_fg = _measure_rate(fg_step, u0, burn, window)
        if r_sg > 1.0 + 1e-9 or r_fg > 1.0 + 1e-9:
            raise UnstableDynamics(f"measured rates {r_sg:.6g}, {r_fg:.6g} exceed 1")
        rep.record(0.01 - abs(r_sg - pred_sg) / pred_sg)
        rep.record(0.01 - abs(r_fg - pred_fg) / pred_fg)
        if norm_ij < 1.0 and eta <= 1.0:
            rep.record(r_fg - r_sg)
        meas.append((r_sg, r_fg))
    rep.details = {"omega": omega, "eta": eta, "predicted_stop_grad": pred_sg,
                   "predicted_full_grad": pred_fg, "measured": meas,
                   "norm_I_minus_J": norm_ij}
    return rep


# ---------------------------------------------------------------- battery

@dataclass(frozen=True)
class Battery:
    categories: tuple = (0, 1, 2, 3, 4)
    seeds: tuple = (0, 1, 2, 3, 4)
    resolution: int = 32
    regimes: tuple = ("dirichlet", "neumann", "random")
    vectors: int = 20
    K_list: tuple = (1, 5, 20, 40)
    etas: tuple = (0.25, 0.5, 1.0)
    stop_grad_K: tuple = (1, 5)
    stop_grad_T: int = 50
    synthetic_pairs: int = 1000
    local_expansion_sizes: tuple = (4,)


BATTERIES = {
    "default": Battery(),
    "quick": Battery(categories=(0, 4), seeds=(0,), resolution=16, vectors=4,
                     etas=(0.5, 1.0), stop_grad_T=10, synthetic_pairs=100),
}


def battery_system(category, seed, resolution, regime):
    spec = sample_geometry(Family.CORNER_REMOVED_SQUARE, category, seed,
                           base_resolution=resolution)
    mesh = build_mesh(spec)
    bc = BoundarySpec.for_regime(regime, mesh, seed)
    forcing = sample_trig_forcing(mesh, seed=seed)
    return assemble(mesh, bc, forcing)


def _system_reports(args):
    category, seed, regime, bat = args
    system = battery_system(category, seed, bat.resolution, regime)
    ref = reference(system)
    tag_seed = seed * 100 + category
    reps = [check_fixed_point(system, bat.vectors, tag_seed, bat.K_list, ref)]
    reps.extend(check_error_proxy(system, bat.K_list, bat.vectors, tag_seed, ref))
    reps.append(check_pcgk_contraction(system, bat.K_list, bat.vectors, tag_seed, ref))
    reps.append(check_norm_equivalence(system, bat.vectors, tag_seed, ref))
    kant, sd = _dense_checks(ref.dense_C, scipy.linalg.eigvalsh(ref.dense_C), bat.vectors,
                             tag_seed, "theory/battery")
    reps.extend([kant, sd])
    for eta in bat.etas:
        for K in bat.stop_grad_K:
            reps.append(check_stop_grad_contraction(system, eta, K, bat.stop_grad_T,
                                                    tag_seed, 1, ref))
    return reps


def _local_expansion_reports(bat):
    reps = []
    for n in bat.local_expansion_sizes:
        mesh = grid_mesh(np.ones((n, n), dtype=bool), 2 * math.pi / n)
        for regime in ("dirichlet", "neumann"):
            system = assemble(mesh, BoundarySpec.for_regime(regime, mesh), np.ones(mesh.n_cells))
            for omega, eta in ((2.0 / 3.0, 0.5), (0.1, 1.0)):
                reps.append(check_local_expansion(omega, system, eta))
    return reps


def run_battery(name="default", threads=1):
    """Run a named battery; returns ``(reports, summary)``."""
    bat = BATTERIES[name] if isinstance(name, str) else name
    start = time.perf_counter()
    jobs = [(k, s, r, bat) for k in bat.categories for s in bat.seeds for r in bat.regimes]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(_system_reports, jobs))
    else:
        results = [_system_reports(j) for j in jobs]
    merged = {}
    for reps in results:
        for rep in reps:
            _merge_into(merged, rep)
    kant, sd = check_synthetic_lemmas(bat.synthetic_pairs)
    _merge_into(merged, kant)
    _merge_into(merged, sd)
    for rep in _local_expansion_reports(bat):
        _merge_into(merged, rep)
    reports = [merged[t] for t in TheoremId if t in merged]
    summary = {"battery": name if isinstance(name, str) else "custom",
               "systems": len(jobs), "runtime_s": time.perf_counter() - start,
               "passed": all(r.passed for r in reports)}
    return reports, summary


def _merge_into(merged, rep):
    if rep.theorem_id in merged:
        merged[rep.theorem_id].merge(rep)
    else:
        merged[rep.theorem_id] = TheoremReport(rep.theorem_id, rep.trials,
                                               rep.max_violation, rep.passed)
