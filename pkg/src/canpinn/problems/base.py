"""Problem definitions, boundary conditions and collocation sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..diff_engine import Jet2, Node, constant_jet, mean, reduce_sum, square
from ..schemes import FieldProbe, SchemeConfig, ask

Residual = Callable[[Mapping[str, FieldProbe], np.ndarray, SchemeConfig, Mapping[str, object]], list]


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    """Axis-aligned box over all inputs (spatial and temporal)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in dimension")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box must have positive extent along every axis")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, points, closed: bool = True) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if closed:
            return np.all((p >= lo) & (p <= hi), axis=1)
        return np.all((p > lo) & (p < hi), axis=1)


class Polygon:
    """Simple polygon in the plane with an even-odd inside test."""

    def __init__(self, vertices, boundary_points=None):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise ValueError("a polygon needs at least three 2-D vertices")
        self._boundary = None if boundary_points is None else np.asarray(boundary_points, dtype=np.float64)

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)[:, :2]
        x, y = p[:, 0:1], p[:, 1:2]
        v0 = self.vertices
        v1 = np.roll(v0, -1, axis=0)
        xi, yi, xj, yj = v0[:, 0], v0[:, 1], v1[:, 0], v1[:, 1]
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = xi + (y - yi) * (xj - xi) / (yj - yi)
        hits = crosses & (x < x_at)
        return (np.count_nonzero(hits, axis=1) % 2) == 1

    def boundary_points(self, spacing: float) -> np.ndarray:
        if self._boundary is not None:
            return self._boundary
        pts = []
        v0 = self.vertices
        v1 = np.roll(v0, -1, axis=0)
        for a, b in zip(v0, v1):
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
            t = np.arange(n)[:, None] / n
            pts.append(a + t * (b - a))
        return np.concatenate(pts)

    def on_boundary(self, points, tol: float = 1e-9) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)[:, :2]
        v0 = self.vertices
        v1 = np.roll(v0, -1, axis=0)
        best = np.full(len(p), np.inf)
        for a, b in zip(v0, v1):
            ab = b - a
            t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
            d = np.linalg.norm(p - (a + t[:, None] * ab), axis=1)
            best = np.minimum(best, d)
        return best <= tol


@dataclass
class BoundaryCondition:
    """One boundary segment with its condition.

    ``region`` selects the points it owns; when several conditions match a
    point the first one listed on the problem wins.
    """

    name: str
    kind: str
    fields: tuple[str, ...]
    region: Callable[[np.ndarray], np.ndarray]
    target: Callable[[np.ndarray], dict[str, np.ndarray]] | Mapping[str, float] | None = None
    axis: int | None = None

    KINDS = ("dirichlet-value", "dirichlet-function", "neumann-zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "neumann-zero" and self.axis is None:
            raise ValueError("a zero-gradient condition needs an axis")
        if self.kind != "neumann-zero" and self.target is None:
            raise ValueError("a Dirichlet condition needs a target")
        if self.kind == "dirichlet-value":
            bad = [k for k, v in dict(self.target).items() if not np.isfinite(v)]
            if bad:
                raise ValueError(f"non-finite targets for {bad}")

    def targets(self, points) -> dict[str, np.ndarray]:
        n = len(points)
        if self.kind == "dirichlet-value":
            return {k: np.full(n, float(v)) for k, v in dict(self.target).items()}
        if self.kind == "dirichlet-function":
            return {k: np.asarray(v, dtype=np.float64) for k, v in self.target(points).items()}
        return {k: np.zeros(n) for k in self.fields}

    def residuals(self, fields: Mapping[str, FieldProbe], points) -> list[Node]:
        out = []
        if self.kind == "neumann-zero":
            for name in self.fields:
                out.append(ask(fields[name], points, (self.axis,)).d(self.axis))
            return out
        goal = self.targets(points)
        for name in self.fields:
            out.append(ask(fields[name], points).value - goal[name])
        return out


@dataclass
class GridSpec:
    """Tensor grid: ``counts`` nodes per axis, closed or cell-centred."""

    counts: tuple[int, ...]
    cell_centered: tuple[bool, ...] | bool = False

    def centred(self, dim: int) -> tuple[bool, ...]:
        if isinstance(self.cell_centered, bool):
            return (self.cell_centered,) * dim
        return tuple(self.cell_centered)

    def axes(self, box: Box) -> list[np.ndarray]:
        if len(self.counts) != box.dim:
            raise ProblemError(f"grid has {len(self.counts)} axes, domain has {box.dim}")
        out = []
        for n, lo, hi, cc in zip(self.counts, box.lower, box.upper, self.centred(box.dim)):
            if n < 1 or (not cc and n < 2):
                raise ProblemError("grid spacing is larger than the domain")
            if cc:
                out.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
            else:
                out.append(np.linspace(lo, hi, n))
        return out

    def points(self, box: Box) -> np.ndarray:
        return tensor_points(self.axes(box))


def tensor_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Row-major tensor product: the last axis varies fastest."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class Problem:
    name: str
    inputs: tuple[str, ...]
    fields: tuple[str, ...]
    domain: Box
    residual: Residual
    bcs: list[BoundaryCondition]
    default_delta: tuple[float, ...]
    default_collocation: "CollocationSpec"
    eval_grid: GridSpec
    time_axis: int | None = None
    initial: BoundaryCondition | None = None
    exact: Callable[[np.ndarray], dict[str, np.ndarray]] | None = None
    scalars: dict[str, float] = field(default_factory=dict)
    polygon: Polygon | None = None
    n_residuals: int = 1
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.inputs)

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.dim) if i != self.time_axis)

    def inside(self, points, closed: bool = True) -> np.ndarray:
        mask = self.domain.contains(points, closed)
        if self.polygon is not None:
            mask &= self.polygon.contains(points)
        return mask

    def evaluation_points(self) -> tuple[np.ndarray, list[np.ndarray]]:
        axes = self.eval_grid.axes(self.domain)
        return tensor_points(axes), axes

    def assign_bcs(self, points) -> list[tuple[BoundaryCondition, np.ndarray]]:
        """Partition boundary points among conditions (first match wins)."""
        points = np.asarray(points, dtype=np.float64)
        owner = np.full(len(points), -1)
        for i, bc in enumerate(self.bcs):
            hit = (owner < 0) & np.asarray(bc.region(points), dtype=bool)
            owner[hit] = i
        if np.any(owner < 0):
            bad = points[owner < 0][0]
            raise ProblemError(f"point {bad} is not covered by any boundary condition of {self.name}")
        return [(bc, np.flatnonzero(owner == i)) for i, bc in enumerate(self.bcs) if np.any(owner == i)]

    def boundary_targets(self, points) -> dict[str, np.ndarray]:
        """Dirichlet targets per field (NaN where a field is not prescribed)."""
        points = np.asarray(points, dtype=np.float64)
        out = {f: np.full(len(points), np.nan) for f in self.fields}
        for bc, idx in self.assign_bcs(points):
            if bc.kind == "neumann-zero":
                continue
            for k, v in bc.targets(points[idx]).items():
                out[k][idx] = v
        return out

    def boundary_loss(self, fields: Mapping[str, FieldProbe], points) -> Node:
        points = np.asarray(points, dtype=np.float64)
        total = None
        for bc, idx in self.assign_bcs(points):
            for r in bc.residuals(fields, points[idx]):
                s = reduce_sum(square(r))
                total = s if total is None else total + s
        return total * (1.0 / len(points))

    def initial_loss(self, fields: Mapping[str, FieldProbe], points) -> Node:
        if self.initial is None:
            raise ProblemError(f"{self.name} has no initial condition")
        total = None
        for r in self.initial.residuals(fields, points):
            m = mean(square(r))
            total = m if total is None else total + m
        return total

    def residuals(self, fields, points, scheme: SchemeConfig, scalars=None) -> list[Node]:
        vals = dict(self.scalars)
        if scalars:
            vals.update(scalars)
        return self.residual(fields, np.asarray(points, dtype=np.float64), scheme, vals)

    def default_scheme(self, kind: str = "can") -> SchemeConfig:
        if kind == "a":
            return SchemeConfig.a_pinn(self.default_delta)
        if kind == "n":
            return SchemeConfig.n_pinn(self.default_delta)
        return SchemeConfig.can_pinn(self.default_delta)


def zero_probe(dim: int) -> FieldProbe:
    """Probe of the identically zero field."""
    return lambda points: constant_jet(np.zeros(len(points)), dim)


def constant_probe(c: float, dim: int) -> FieldProbe:
    return lambda points: constant_jet(np.full(len(points), float(c)), dim)


# ---------------------------------------------------------------------------
# collocation
# ---------------------------------------------------------------------------


@dataclass
class CollocationSpec:
    """How collocation points are produced.

    kind ``grid``: equidistant tensor grid (``grid``), boundary and initial
    sets taken from the grid faces. kind ``random``: fixed uniform sample of
    ``n_interior`` / ``n_boundary`` / ``n_initial`` points. kind
    ``resample``: fresh uniform points for every mini-batch.
    """

    kind: str = "grid"
    grid: GridSpec | None = None
    n_interior: int = 0
    n_boundary: int = 0
    n_initial: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "random", "resample"):
            raise ValueError(f"unknown collocation kind {self.kind!r}")
        if self.kind == "grid" and self.grid is None:
            raise ValueError("grid collocation requires a grid spec")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.grid is not None:
            d["counts"] = list(self.grid.counts)
            cc = self.grid.cell_centered
            d["cell_centered"] = cc if isinstance(cc, bool) else list(cc)
        if self.kind != "grid":
            d.update(n_interior=self.n_interior, n_boundary=self.n_boundary, n_initial=self.n_initial)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CollocationSpec":
        grid = None
        if "counts" in d:
            cc = d.get("cell_centered", False)
            grid = GridSpec(tuple(d["counts"]), cc if isinstance(cc, bool) else tuple(cc))
        return cls(d.get("kind", "grid"), grid, d.get("n_interior", 0), d.get("n_boundary", 0), d.get("n_initial", 0))


@dataclass
class CollocationSet:
    interior: np.ndarray
    initial: np.ndarray
    boundary: np.ndarray
    provenance: dict
    resample: bool = False


def _face_points(problem: Problem, axes: list[np.ndarray]) -> np.ndarray:
    box = problem.domain
    parts = []
    for a in problem.spatial_axes:
        for bound in (box.lower[a], box.upper[a]):
            face_axes = list(axes)
            face_axes[a] = np.array([bound])
            parts.append(tensor_points(face_axes))
    pts = np.concatenate(parts)
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def _initial_points(problem: Problem, axes: list[np.ndarray]) -> np.ndarray:
    if problem.time_axis is None or problem.initial is None:
        return np.zeros((0, problem.dim))
    init_axes = list(axes)
    init_axes[problem.time_axis] = np.array([problem.domain.lower[problem.time_axis]])
    return tensor_points(init_axes)


def random_interior(problem: Problem, rng: np.random.Generator, n: int) -> np.ndarray:
    lo = np.asarray(problem.domain.lower)
    hi = np.asarray(problem.domain.upper)
    out = np.zeros((0, problem.dim))
    while len(out) < n:
        cand = lo + rng.random((max(2 * (n - len(out)), 16), problem.dim)) * (hi - lo)
        cand = cand[problem.inside(cand, closed=False)]
        out = np.concatenate([out, cand])
    return out[:n]


def random_boundary(problem: Problem, rng: np.random.Generator, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((0, problem.dim))
    if problem.polygon is not None:
        pts = problem.polygon.boundary_points(min(problem.domain.extent) / 200)
        return pts[rng.choice(len(pts), size=n, replace=len(pts) < n)]
    box = problem.domain
    ext = box.extent
    faces = []
    weights = []
    for a in problem.spatial_axes:
        others = [i for i in range(problem.dim) if i != a]
        w = float(np.prod(ext[others])) if others else 1.0
        for bound in (box.lower[a], box.upper[a]):
            faces.append((a, bound))
            weights.append(w)
    weights = np.asarray(weights) / np.sum(weights)
    pick = rng.choice(len(faces), size=n, p=weights)
    pts = np.asarray(box.lower) + rng.random((n, problem.dim)) * ext
    for i, (a, bound) in enumerate(faces):
        pts[pick == i, a] = bound
    return pts


def random_initial(problem: Problem, rng: np.random.Generator, n: int) -> np.ndarray:
    if problem.time_axis is None or n == 0:
        return np.zeros((0, problem.dim))
    pts = random_interior(problem, rng, n)
    pts[:, problem.time_axis] = problem.domain.lower[problem.time_axis]
    return pts


def sample_collocation(problem: Problem, spec: CollocationSpec | None = None, seed: int = 0) -> CollocationSet:
    """Deterministic interior / initial / boundary point sets for training."""
    spec = spec or problem.default_collocation
    provenance = {"spec": spec.to_dict(), "seed": int(seed)}
    if spec.kind == "grid":
        axes = spec.grid.axes(problem.domain)
        interior = tensor_points(axes)
        boundary = _face_points(problem, axes)
        if problem.polygon is not None:
            interior = interior[problem.inside(interior) & ~problem.polygon.on_boundary(interior)]
            spacing = min(float(a[1] - a[0]) for a in axes if len(a) > 1)
            boundary = problem.polygon.boundary_points(spacing)
        initial = _initial_points(problem, axes)
        if problem.time_axis is not None and problem.initial is not None:
            t0 = problem.domain.lower[problem.time_axis]
            boundary = boundary[boundary[:, problem.time_axis] > t0]
        return CollocationSet(interior, initial, boundary, provenance)
    rng = np.random.default_rng([int(seed), 7])
    if spec.kind == "resample":
        empty = np.zeros((0, problem.dim))
        return CollocationSet(empty, empty, empty, provenance, resample=True)
    return CollocationSet(
        random_interior(problem, rng, spec.n_interior),
        random_initial(problem, rng, spec.n_initial),
        random_boundary(problem, rng, spec.n_boundary),
        provenance,
    )


def on_value(points, axis: int, value: float, tol: float = 1e-9) -> np.ndarray:
    return np.abs(np.asarray(points)[:, axis] - value) <= tol * max(1.0, abs(value))
