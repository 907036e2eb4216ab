"""Per-cell surrogate models trained under iterative, residual or data
supervision.

The model is a pointwise perceptron on cell features, so predictions are
equivariant under cell reindexing. Gradients are written out by hand.
"""
from dataclasses import asdict, dataclass, field
import enum
import math
import time

import numpy as np
from scipy.spatial import cKDTree

from .errors import DivergenceDetected, FeatureMismatch
from .krylov import PCGConfig, energy_norm, f_k, pcg_solve
from .rng import stream

LR_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
DEFAULT_OMEGA = 2.0 / 3.0


class SupervisionMode(str, enum.Enum):
    ITERATIVE = "IterativeSupervision"
    RESIDUAL = "ResidualSupervision"
    DATA = "DataSupervision"

    @classmethod
    def parse(cls, name):
        aliases = {"iter": cls.ITERATIVE, "residual": cls.RESIDUAL, "data": cls.DATA}
        return aliases.get(name) or cls(name)


# ---------------------------------------------------------------- features

def n_features(dim):
    return dim + 4


def cell_features(mesh, bc, forcing):
    """Columns: coordinates mapped to [-1, 1], forcing, distance to the
    nearest Dirichlet face, distance to the nearest Neumann face, relative
    cell volume. Distances are scaled by the domain length; a missing face
    type gets distance ``sqrt(dim)``.
    """
    forcing = np.asarray(forcing, dtype=float)
    if forcing.shape != (mesh.n_cells,):
        raise FeatureMismatch(f"forcing has shape {forcing.shape}, mesh has {mesh.n_cells} cells")
    length = mesh.h * max(mesh.shape)
    x = mesh.cell_centroids
    cols = [2.0 * x / length - 1.0, forcing[:, None]]
    is_d, _ = bc.face_arrays(mesh)
    for mask in (is_d, ~is_d):
        if mask.any():
            dist, _ = cKDTree(mesh.bface_centroid[mask]).query(x)
            cols.append((dist / length)[:, None])
        else:
            cols.append(np.full((mesh.n_cells, 1), math.sqrt(mesh.dim)))
    cols.append((mesh.cell_volumes / mesh.h ** mesh.dim)[:, None])
    return np.ascontiguousarray(np.hstack(cols))


# ---------------------------------------------------------------- models

class SurrogateModel:
    """Per-cell perceptron with two tanh hidden layers of equal width.

    The output layer starts at zero unless ``zero_output`` is False.
    """

    def __init__(self, n_features, hidden_width=64, seed=0, zero_output=True):
        rng = stream(seed, "surrogate/init", n_features, hidden_width)
        h = hidden_width
        self.n_features = n_features
        self.hidden_width = h
        self.params = [
            rng.standard_normal((n_features, h)) * math.sqrt(1.0 / n_features),
            np.zeros(h),
            rng.standard_normal((h, h)) * math.sqrt(1.0 / h),
            np.zeros(h),
            np.zeros((h, 1)) if zero_output else rng.standard_normal((h, 1)) * math.sqrt(1.0 / h),
            np.zeros(1),
        ]

    def forward(self, X):
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise FeatureMismatch(f"expected {self.n_features} features, got array {X.shape}")
        w1, b1, w2, b2, w3, b3 = self.params
        h1 = np.tanh(X @ w1 + b1)
        h2 = np.tanh(h1 @ w2 + b2)
        out = (h2 @ w3)[:, 0] + b3[0]
        return out, (X, h1, h2)

    def backward(self, cache, grad_out):
        X, h1, h2 = cache
        w1, b1, w2, b2, w3, b3 = self.params
        g = grad_out[:, None]
        gw3 = h2.T @ g
        gb3 = g.sum(axis=0)
        d2 = (g @ w3.T) * (1.0 - h2 * h2)
        gw2 = h1.T @ d2
        gb2 = d2.sum(axis=0)
        d1 = (d2 @ w2.T) * (1.0 - h1 * h1)
        gw1 = X.T @ d1
        gb1 = d1.sum(axis=0)
        return [gw1, gb1, gw2, gb2, gw3, gb3]

    def copy(self):
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other


class FreeField:
    """Identity parameterization: the prediction is the trainable vector."""

    def __init__(self, values):
        self.params = [np.array(values, dtype=float)]

    def forward(self, X):
        if X.shape[0] != self.params[0].shape[0]:
            raise FeatureMismatch(f"free field has {self.params[0].shape[0]} cells, got {X.shape[0]}")
        return self.params[0].copy(), None

    def backward(self, cache, grad_out):
        return [np.array(grad_out, dtype=float)]

    def copy(self):
        return FreeField(self.params[0])


def predict(model, mesh, bc, forcing):
    out, _ = model.forward(cell_features(mesh, bc, forcing))
    return out


# ---------------------------------------------------------------- losses

def richardson_composite(system, u, K, omega=DEFAULT_OMEGA, preconditioner=None):
    """``K`` applications of ``u - omega M^{-1}(A u - b)``."""
    m = system.diagonal if preconditioner is None else preconditioner
    for _ in range(K):
        u = u - omega * (system.matrix @ u - system.rhs) / m
    return u


def _richardson_transpose_jacobian(system, x, K, omega, preconditioner=None):
    # J^T = I - omega A M^{-1}; A symmetric
    m = system.diagonal if preconditioner is None else preconditioner
    for _ in range(K):
        x = x - omega * (system.matrix @ (x / m))
    return x


def loss_iterative(system, prediction, K, stop_gradient=True, *, omega=DEFAULT_OMEGA,
                   preconditioner=None):
    """``||u - F_K(u)||^2`` and its gradient in ``u``.

    With ``stop_gradient`` the target ``F_K(u)`` is PCG and is held fixed, so
    the gradient is ``2 s_K(u)``. Without it ``F_K`` is the K-fold Richardson
    map and the gradient is ``2 (I - J_K)^T s_K(u)``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    u = np.asarray(prediction, dtype=float)
    if stop_gradient:
        s = u - f_k(system, u, K, preconditioner=preconditioner)
        return float(s @ s), 2.0 * s
    s = u - richardson_composite(system, u, K, omega, preconditioner)
    grad = 2.0 * (s - _richardson_transpose_jacobian(system, s, K, omega, preconditioner))
    return float(s @ s), grad


def loss_residual(system, prediction):
    """``||A u - b||^2`` and gradient ``2 A (A u - b)``."""
    r = system.matrix @ prediction - system.rhs
    return float(r @ r), 2.0 * (system.matrix @ r)


def loss_data(prediction, reference):
    d = np.asarray(prediction, dtype=float) - reference
    return float(d @ d), 2.0 * d


# ---------------------------------------------------------------- training

@dataclass
class Instance:
    mesh: object
    bc: object
    forcing: np.ndarray
    system: object
    features: np.ndarray = None
    reference: np.ndarray = None

    def __post_init__(self):
        if self.features is None:
            self.features = cell_features(self.mesh, self.bc, self.forcing)
        if self.reference is None:
            tol = 1e-12 * max(float(np.linalg.norm(self.system.rhs)), 1e-300)
            self.reference, _ = pcg_solve(self.system,
                                          config=PCGConfig(max_iters=100000, abs_tol=tol))


@dataclass(frozen=True)
class TrainConfig:
    mode: SupervisionMode = SupervisionMode.ITERATIVE
    K: int = 40
    stop_gradient: bool = True
    learning_rate: float = 1e-2
    steps: int = 100
    seed: int = 0
    reduction: str = "mean"
    omega: float = DEFAULT_OMEGA
    divergence_factor: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "mode", SupervisionMode.parse(self.mode)
                           if isinstance(self.mode, str) else self.mode)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class SupervisionRun:
    config: dict
    loss: list = field(default_factory=list)
    rel_error: list = field(default_factory=list)
    energy_error: list = field(default_factory=list)
    forward_s: list = field(default_factory=list)
    target_s: list = field(default_factory=list)
    backward_s: list = field(default_factory=list)
    diverged_at: int = None

    @property
    def final_rel_error(self):
        if self.diverged_at is not None or not self.rel_error:
            return math.inf
        return self.rel_error[-1]

    def cost_breakdown(self):
        """Median per-step phase times in ms and the loss share of a step."""
        fw = float(np.median(self.forward_s)) * 1e3
        tg = float(np.median(self.target_s)) * 1e3
        bw = float(np.median(self.backward_s)) * 1e3
        total = fw + tg + bw
        return {"forward_ms": fw, "loss_ms": tg, "backward_ms": bw, "total_ms": total,
                "loss_ratio": tg / total if total > 0 else 0.0}

    def to_dict(self):
        d = asdict(self)
        d["final_rel_error"] = self.final_rel_error
        d["cost_breakdown"] = self.cost_breakdown() if self.forward_s else None
        return d


def _instance_loss(inst, pred, config):
    if config.mode is SupervisionMode.ITERATIVE:
        return loss_iterative(inst.system, pred, config.K, config.stop_gradient,
                              omega=config.omega)
    if config.mode is SupervisionMode.RESIDUAL:
        return loss_residual(inst.system, pred)
    return loss_data(pred, inst.reference)


def train(model, instances, config):
    """Plain gradient descent on the selected supervision loss.

    Metrics at step ``t`` describe the prediction before the ``t``-th
    update. Raises ``DivergenceDetected`` (carrying the partial run as
    ``.run``) when the loss exceeds ``divergence_factor`` times its first
    value or stops being finite.
    """
    if not instances:
        raise ValueError("at least one instance is required")
    run = SupervisionRun(config.to_dict())
    loss0 = None
    clock = time.perf_counter
    for step in range(config.steps):
        total, grads = 0.0, None
        t_fw = t_tg = t_bw = 0.0
        errs, eerrs = [], []
        for inst in instances:
            t0 = clock()
            pred, cache = model.forward(inst.features)
            t1 = clock()
            val, g = _instance_loss(inst, pred, config)
            scale = 1.0 / len(instances)
            if config.reduction == "mean":
                scale /= inst.system.n
            val *= scale
            g *= scale
            t2 = clock()
            gp = model.backward(cache, g)
            if grads is None:
                grads = gp
            else:
                for a, b in zip(grads, gp):
                    a += b
            t3 = clock()
            t_fw += t1 - t0
            t_tg += t2 - t1
            t_bw += t3 - t2
            total += val
            err = pred - inst.reference
            errs.append(np.linalg.norm(err) / max(np.linalg.norm(inst.reference), 1e-300))
            eerrs.append(energy_norm(inst.system, err) if np.all(np.isfinite(err)) else math.inf)
        if loss0 is None:
            loss0 = total
        if not math.isfinite(total) or total > config.divergence_factor * max(loss0, 1e-300):
            run.diverged_at = step
            exc = DivergenceDetected(step, total)
            exc.run = run
            raise exc
        t0 = clock()
        for p, g in zip(model.params, grads):
            p -= config.learning_rate * g
        t_bw += clock() - t0
        run.loss.append(total)
        run.rel_error.append(float(np.mean(errs)))
        run.energy_error.append(float(np.mean(eerrs)))
        run.forward_s.append(t_fw)
        run.target_s.append(t_tg)
        run.backward_s.append(t_bw)
    return run


def evaluate(model, instances):
    """Mean relative L2 error of the current model against the references."""
    errs = []
    for inst in instances:
        pred, _ = model.forward(inst.features)
        errs.append(np.linalg.norm(pred - inst.reference) / np.linalg.norm(inst.reference))
    return float(np.mean(errs))


def train_safely(model, instances, config):
    """Like ``train`` but returns the partial run on divergence."""
    try:
        return train(model, instances, config)
    except DivergenceDetected as exc:
        return exc.run


def tune_learning_rate(make_model, instances, config, grid=LR_GRID):
    """Train a fresh model at each rate; returns ``(best_lr, best_run, finals)``.

    ``finals`` maps each rate to the error of the trained model, with
    diverged runs scored as infinite.
    """
    finals, runs = {}, {}
    for lr in grid:
        cfg = TrainConfig(**{**config.to_dict(), "learning_rate": lr})
        model = make_model()
        run = train_safely(model, instances, cfg)
        finals[lr] = math.inf if run.diverged_at is not None else evaluate(model, instances)
        runs[lr] = run
    best = min(finals, key=lambda k: finals[k])
    return best, runs[best], finals
