"""Loss assembly, Adam with gradient accumulation, and training loops.

One *iteration* is one mini-batch loss evaluation. The gradients of a window
of iterations (default 100) are averaged and applied in a single Adam step;
the plateau schedule is consulted once per window.

For speed a window is evaluated as a few concatenated chunks of mini-batches
rather than one batch at a time. With equal batch sizes every loss term is a
mean, so a chunk's loss is the average of its batch losses and the window
gradient ``sum_c (k_c / K) * grad(L_c)`` equals the average of the per-batch
gradients exactly (up to floating-point association).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .analysis import fmt
from .diff_engine import Node, ParamStore, Tape, mean, square
from .network import NetworkConfig, NetworkField, init_params, predict
from .problems import CollocationSpec, GroundTruth, Problem, sample_collocation
from .problems.base import random_boundary, random_initial, random_interior
from .schemes import SchemeConfig, ask

log = logging.getLogger(__name__)

MIN_LR = 5e-6


class TrainingAborted(RuntimeError):
    """Non-finite loss or gradient; carries the iteration and offending slices."""

    def __init__(self, message: str, iteration: int | None = None, slices: Sequence[str] = ()):
        super().__init__(message)
        self.iteration = iteration
        self.slices = list(slices)


@dataclass(frozen=True)
class LossSpec:
    """L = PDE / lam + w_ic * IC + w_bc * BC + w_data * DATA, every term a mean."""

    lam: float = 1.0
    ic_weight: float = 1.0
    bc_weight: float = 1.0
    data_weight: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if min(self.ic_weight, self.bc_weight, self.data_weight) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "ic_weight": self.ic_weight, "bc_weight": self.bc_weight, "data_weight": self.data_weight}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LossSpec":
        return cls(d.get("lambda", 1.0), d.get("ic_weight", 1.0), d.get("bc_weight", 1.0), d.get("data_weight", 0.0))


@dataclass(frozen=True)
class PlateauSchedule:
    factor: float = 0.5
    patience: int = 10
    threshold: float = 1e-3
    min_lr: float = MIN_LR

    def to_dict(self) -> dict:
        return {"factor": self.factor, "patience": self.patience, "threshold": self.threshold, "min_lr": self.min_lr}


@dataclass
class TrainConfig:
    max_iterations: int = 100_000
    batch: tuple[int, int, int] = (6, 0, 2)
    lr: float = 5e-3
    schedule: PlateauSchedule = field(default_factory=PlateauSchedule)
    window: int = 100
    seed: int = 0
    scheme: SchemeConfig | None = None
    collocation: CollocationSpec | None = None
    eval_every: int = 10
    chunk_points: int = 1024
    budget_seconds: float | None = None

    def __post_init__(self):
        self.batch = tuple(int(b) for b in self.batch)
        if len(self.batch) != 3 or min(self.batch) < 0:
            raise ValueError("batch must be three non-negative counts (pde, ic, bc)")
        if self.batch[0] < 1:
            raise ValueError("the PDE batch must not be empty")
        if self.max_iterations < 0 or self.window < 1:
            raise ValueError("iterations must be >= 0 and the window >= 1")
        # lr = 0 freezes the parameters; the schedule then never raises it
        if self.lr < 0 or (self.lr > 0 and self.schedule.min_lr > self.lr):
            raise ValueError("need min_lr <= lr, or lr = 0 for a frozen run")

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "batch": list(self.batch),
            "lr": self.lr,
            "schedule": self.schedule.to_dict(),
            "window": self.window,
            "seed": self.seed,
            "scheme": None if self.scheme is None else self.scheme.to_dict(),
            "collocation": None if self.collocation is None else self.collocation.to_dict(),
            "eval_every": self.eval_every,
            "chunk_points": self.chunk_points,
        }


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def _bad_slices(store: ParamStore, vec: np.ndarray) -> list[str]:
    return [name for name in store.names if not np.all(np.isfinite(vec[store.span(name)]))]


def adam_step(
    store: ParamStore, grads: np.ndarray, state: AdamState, lr: float, iteration: int | None = None
) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update; returns new objects, inputs untouched."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != store.data.shape or state.m.shape != grads.shape:
        raise ValueError(f"gradient length {grads.size} does not match {len(store)} parameters")
    if not np.all(np.isfinite(grads)):
        bad = _bad_slices(store, grads)
        raise TrainingAborted(f"non-finite gradient at iteration {iteration} in {bad}", iteration, bad)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    data = store.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return store.with_data(data), replace(state, m=m, v=v, t=t)


class PlateauScheduler:
    """Halve the learning rate when the windowed loss stalls.

    An improvement must beat the best loss by the relative threshold; after
    ``patience`` windows without one the rate drops by ``factor``, never
    below ``min_lr``.
    """

    def __init__(self, lr: float, schedule: PlateauSchedule = PlateauSchedule()):
        self.lr = float(lr)
        self.schedule = schedule
        self.best = math.inf
        self.wait = 0

    def step(self, loss: float) -> float:
        s = self.schedule
        if self.lr == 0.0:
            return self.lr
        if loss < self.best * (1.0 - s.threshold) or self.best == math.inf:
            self.best = float(loss)
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= s.patience:
                self.lr = max(self.lr * s.factor, s.min_lr)
                self.wait = 0
        return self.lr


def reduce_lr_on_plateau(losses: Sequence[float], lr: float, schedule: PlateauSchedule = PlateauSchedule()) -> float:
    """Learning rate after replaying a history of windowed losses."""
    sched = PlateauScheduler(lr, schedule)
    for loss in losses:
        sched.step(loss)
    return sched.lr


# ---------------------------------------------------------------------------
# data and loss
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    pde: np.ndarray
    ic: np.ndarray
    bc: np.ndarray


@dataclass
class InverseSpec:
    """Observed field values plus scalars of the equation to be inferred."""

    points: np.ndarray
    values: dict[str, np.ndarray]
    trainable: dict[str, float]
    data_weight: float = 100.0
    positive: tuple[str, ...] | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in self.values.items()}
        for k, v in self.values.items():
            if v.shape != (len(self.points),):
                raise ValueError(f"observations of {k} do not match the observation points")
        if self.positive is None:
            self.positive = tuple(self.trainable)


def make_observations(problem: Problem, truth: GroundTruth, n: int, seed: int, fields: Sequence[str] | None = None):
    """``n`` uniform interior points with reference values of ``fields``."""
    rng = np.random.default_rng([int(seed), 11])
    pts = random_interior(problem, rng, n)
    vals = truth.values(pts)
    keep = fields or [f for f in problem.fields if f in vals and f != "p"]
    return pts, {k: vals[k] for k in keep}


def data_loss(fields: Mapping, points, values: Mapping[str, np.ndarray]) -> Node:
    total = None
    for name, obs in values.items():
        m = mean(square(ask(fields[name], points).value - obs))
        total = m if total is None else total + m
    return total


def assemble_loss(
    problem: Problem,
    fields: Mapping,
    batch: Batch,
    loss_spec: LossSpec,
    scheme: SchemeConfig,
    scalars: Mapping | None = None,
    observations: tuple[np.ndarray, Mapping[str, np.ndarray]] | None = None,
) -> tuple[Node, dict[str, float]]:
    """Weighted PINN loss and the plain value of each term."""
    if len(batch.pde) == 0:
        raise ValueError("the PDE batch is empty")
    pde = None
    for r in problem.residuals(fields, batch.pde, scheme, scalars):
        m = mean(square(r))
        pde = m if pde is None else pde + m
    total = pde * (1.0 / loss_spec.lam)
    parts = {"pde": float(pde.value)}
    if len(batch.ic):
        ic = problem.initial_loss(fields, batch.ic)
        total = total + ic * loss_spec.ic_weight
        parts["ic"] = float(ic.value)
    if len(batch.bc):
        bc = problem.boundary_loss(fields, batch.bc)
        total = total + bc * loss_spec.bc_weight
        parts["bc"] = float(bc.value)
    if observations is not None and loss_spec.data_weight > 0:
        d = data_loss(fields, observations[0], observations[1])
        total = total + d * loss_spec.data_weight
        parts["data"] = float(d.value)
    parts["total"] = float(total.value)
    return total, parts


class BatchSampler:
    """Mini-batches without replacement from fixed sets, reshuffled per epoch.

    On a resampling collocation spec fresh uniform points are drawn for
    every batch. A set no larger than its batch count is used whole.
    """

    def __init__(self, problem: Problem, colloc, counts: tuple[int, int, int], rng: np.random.Generator):
        self.problem = problem
        self.colloc = colloc
        self.counts = counts
        self.rng = rng
        self._sets = (colloc.interior, colloc.initial, colloc.boundary)
        self._perm = [None, None, None]
        self._pos = [0, 0, 0]
        if not colloc.resample:
            names = ("interior", "initial", "boundary")
            for s, n, name in zip(self._sets, counts, names):
                if n > 0 and len(s) == 0:
                    raise ValueError(f"batch asks for {n} {name} points but the collocation set has none")

    def _take(self, k: int) -> np.ndarray:
        pts, n = self._sets[k], self.counts[k]
        if n == 0:
            return pts[:0]
        if n >= len(pts):
            return pts
        if self._perm[k] is None or self._pos[k] + n > len(pts):
            self._perm[k] = self.rng.permutation(len(pts))
            self._pos[k] = 0
        idx = self._perm[k][self._pos[k] : self._pos[k] + n]
        self._pos[k] += n
        return pts[idx]

    def next(self) -> Batch:
        if self.colloc.resample:
            p, rng = self.problem, self.rng
            n_pde, n_ic, n_bc = self.counts
            return Batch(random_interior(p, rng, n_pde), random_initial(p, rng, n_ic), random_boundary(p, rng, n_bc))
        return Batch(self._take(0), self._take(1), self._take(2))

    def chunk(self, n_batches: int) -> Batch:
        batches = [self.next() for _ in range(n_batches)]
        return Batch(*(np.concatenate([getattr(b, f) for b in batches]) for f in ("pde", "ic", "bc")))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def evaluate(
    config: NetworkConfig,
    store: ParamStore,
    problem: Problem,
    truth: GroundTruth,
    points: np.ndarray | None = None,
) -> dict[str, float]:
    """MSE per field on the evaluation grid, plus the u&v average.

    Pressure is only defined up to a constant, so both fields are shifted to
    zero mean before comparison.
    """
    if points is None:
        points, _ = problem.evaluation_points()
    ref = truth.values(points)
    pred = predict(config, store, points)
    out = {}
    for name in config.head_names:
        if name not in ref:
            continue
        a, b = pred[name], ref[name]
        if name == "p":
            a, b = a - a.mean(), b - b.mean()
        out[f"mse.{name}"] = float(np.mean((a - b) ** 2))
    if "mse.u" in out and "mse.v" in out:
        out["uv_mse"] = 0.5 * (out["mse.u"] + out["mse.v"])
    return out


class RunMetrics:
    """Per-window log rows with a fixed column order."""

    BASE = ("iteration", "loss", "lr")

    def __init__(self, fields: Sequence[str] = (), scalars: Sequence[str] = ()):
        cols = list(self.BASE) + [f"mse.{f}" for f in fields]
        if "u" in fields and "v" in fields:
            cols.append("uv_mse")
        cols += list(scalars)
        self.columns = cols
        self.rows: list[dict] = []

    def log(self, **row) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown metric columns {sorted(unknown)}")
        if self.rows and row["iteration"] < self.rows[-1]["iteration"]:
            raise ValueError("iterations must be monotone")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=np.float64)

    def last(self, name: str) -> float:
        for r in reversed(self.rows):
            if name in r:
                return float(r[name])
        return math.nan

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([(str(int(r[c])) if c == "iteration" else fmt(r[c])) if c in r else "" for c in self.columns])
        return path


@dataclass
class TrainResult:
    config: NetworkConfig
    store: ParamStore
    metrics: RunMetrics
    iterations: int
    stopped: str
    inferred: dict[str, float] = field(default_factory=dict)
    final: dict[str, float] = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.metrics.last("loss")


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def _window_gradient(problem, net, store, sampler, k_iter, chunk_batches, loss_spec, scheme, trainable, observations):
    """Averaged gradient and mean loss over ``k_iter`` mini-batches."""
    grad = np.zeros(len(store))
    loss = 0.0
    done = 0
    while done < k_iter:
        k = min(chunk_batches, k_iter - done)
        batch = sampler.chunk(k)
        tape = Tape()
        nodes = store.nodes(tape)
        fields = NetworkField(net, nodes).fields()
        scalars = {name: nodes[name] for name in trainable}
        total, _ = assemble_loss(problem, fields, batch, loss_spec, scheme, scalars, observations)
        w = k / k_iter
        grad += w * tape.gradient(total)
        loss += w * float(total.value)
        done += k
    return grad, loss


def train(
    problem: Problem,
    net: NetworkConfig,
    cfg: TrainConfig,
    loss_spec: LossSpec = LossSpec(),
    truth: GroundTruth | None = None,
    inverse: InverseSpec | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Forward (or, with ``inverse``, joint field and coefficient) training."""
    scheme = cfg.scheme or problem.default_scheme()
    if len(scheme.delta) < len(problem.spatial_axes):
        raise ValueError(f"scheme needs {len(problem.spatial_axes)} spacings, got {len(scheme.delta)}")
    if tuple(net.inputs) != tuple(problem.inputs):
        raise ValueError(f"network inputs {net.inputs} do not match problem inputs {problem.inputs}")
    missing = [f for f in problem.fields if f not in net.head_names]
    if missing:
        raise ValueError(f"network lacks heads {missing}")
    store = init_params(net, cfg.seed)
    trainable: dict[str, float] = {}
    observations = None
    if inverse is not None:
        trainable = dict(inverse.trainable)
        for name, value in trainable.items():
            store = store.add_scalar(name, value)
        observations = (inverse.points, inverse.values)
        loss_spec = replace(loss_spec, data_weight=inverse.data_weight)
    colloc = sample_collocation(problem, cfg.collocation, cfg.seed)
    sampler = BatchSampler(problem, colloc, cfg.batch, np.random.default_rng([cfg.seed, 3]))
    chunk_batches = max(1, cfg.chunk_points // cfg.batch[0])
    fields_logged = [f for f in problem.fields if truth is not None and f in truth.fields]
    metrics = RunMetrics(fields_logged, tuple(trainable))
    state = AdamState.zeros(len(store))
    sched = PlateauScheduler(cfg.lr, cfg.schedule)
    positive = [store.span(n).start for n in (inverse.positive if inverse else ())]
    n_windows = math.ceil(cfg.max_iterations / cfg.window)
    start = time.monotonic()
    iteration = 0
    stopped = "completed"

    def snapshot(it, loss, lr) -> dict:
        row = {"iteration": it, "loss": loss, "lr": lr}
        if truth is not None:
            row.update(evaluate(net, store, problem, truth))
        for name in trainable:
            row[name] = float(store.get(name))
        return row

    for w in range(n_windows):
        k_iter = min(cfg.window, cfg.max_iterations - iteration)
        grad, loss = _window_gradient(problem, net, store, sampler, k_iter, chunk_batches, loss_spec, scheme, trainable, observations)
        if not math.isfinite(loss):
            raise TrainingAborted(f"non-finite loss at iteration {iteration + k_iter}", iteration + k_iter)
        lr = sched.lr
        store, state = adam_step(store, grad, state, lr, iteration + k_iter)
        if positive:
            data = store.data.copy()
            data[positive] = np.maximum(data[positive], 1e-12)
            store = store.with_data(data)
        iteration += k_iter
        sched.step(loss)
        last = w == n_windows - 1
        over = cfg.budget_seconds is not None and time.monotonic() - start > cfg.budget_seconds
        if (w + 1) % max(1, cfg.eval_every) == 0 or last or over:
            row = snapshot(iteration, loss, lr)
        else:
            row = {"iteration": iteration, "loss": loss, "lr": lr}
            row.update({n: float(store.get(n)) for n in trainable})
        metrics.log(**row)
        if progress is not None:
            progress(row)
        if over and not last:
            stopped = "budget"
            log.warning("wall-clock budget exhausted after %d iterations", iteration)
            break
    final = evaluate(net, store, problem, truth) if truth is not None else {}
    inferred = {n: float(store.get(n)) for n in trainable}
    return TrainResult(net, store, metrics, iteration, stopped, inferred, final)


def train_inverse(
    problem: Problem,
    net: NetworkConfig,
    cfg: TrainConfig,
    inverse: InverseSpec,
    loss_spec: LossSpec = LossSpec(),
    truth: GroundTruth | None = None,
    progress=None,
) -> TrainResult:
    """Joint training of the field and the unknown scalars in ``inverse``."""
    return train(problem, net, cfg, loss_spec, truth, inverse, progress)
