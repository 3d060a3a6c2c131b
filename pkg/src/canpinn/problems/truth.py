"""Reference solutions: closed forms or gridded CSV files."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..analysis import fmt
from .base import ProblemError, tensor_points

COORD_NAMES = ("x", "y", "t")


class TruthError(ProblemError):
    pass


class GroundTruth:
    """Field values at arbitrary points inside the reference coverage."""

    fields: tuple[str, ...] = ()

    def values(self, points) -> dict[str, np.ndarray]:
        raise NotImplementedError


class AnalyticTruth(GroundTruth):
    def __init__(self, fn: Callable[[np.ndarray], dict[str, np.ndarray]], fields: Sequence[str]):
        self.fn = fn
        self.fields = tuple(fields)

    def values(self, points) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=np.float64) for k, v in self.fn(np.asarray(points, dtype=np.float64)).items()}


class GridTruth(GroundTruth):
    """Rectangular grid of samples, interpolated (multi)linearly between nodes."""

    def __init__(self, axes: Sequence[np.ndarray], data: dict[str, np.ndarray], coords: Sequence[str] = ()):
        self.axes = [np.asarray(a, dtype=np.float64) for a in axes]
        self.coords = tuple(coords) or COORD_NAMES[: len(self.axes)]
        for i, a in enumerate(self.axes):
            if a.ndim != 1 or a.size < 1 or np.any(np.diff(a) <= 0):
                raise TruthError(f"truth axis {self.coords[i]} is not strictly increasing")
        shape = tuple(a.size for a in self.axes)
        self.data = {}
        for k, v in data.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != shape:
                raise TruthError(f"field {k} has shape {v.shape}, grid is {shape}")
            self.data[k] = v
        self.fields = tuple(self.data)
        self._interp = {}

    def covers(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        ok = np.ones(len(p), dtype=bool)
        for i, a in enumerate(self.axes):
            ok &= (p[:, i] >= a[0]) & (p[:, i] <= a[-1])
        return ok

    def values(self, points) -> dict[str, np.ndarray]:
        p = np.asarray(points, dtype=np.float64)
        if p.shape[1] != len(self.axes):
            raise TruthError(f"truth grid has {len(self.axes)} coordinates, points have {p.shape[1]}")
        bad = ~self.covers(p)
        if np.any(bad):
            raise TruthError(f"ground truth does not cover point {p[bad][0]} ({int(bad.sum())} points outside)")
        # degenerate axes (a single node) cannot be interpolated along
        live = [i for i, a in enumerate(self.axes) if a.size > 1]
        out = {}
        for k, v in self.data.items():
            if k not in self._interp:
                sub = v.reshape([a.size for i, a in enumerate(self.axes) if i in live] or [1])
                self._interp[k] = RegularGridInterpolator([self.axes[i] for i in live], sub, method="linear")
            out[k] = self._interp[k](p[:, live]) if live else np.full(len(p), v.ravel()[0])
        return out


def load_truth_csv(path, required: Sequence[str] = ()) -> GridTruth:
    """Read a row-major CSV grid (header e.g. ``x,y,u,v,p``).

    Coordinate columns are the leading ones named x, y or t; the last
    coordinate varies fastest. ``required`` lists fields that must exist.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TruthError(f"{path}: empty truth file") from None
        rows = [r for r in reader if r]
    n_coord = 0
    while n_coord < len(header) and header[n_coord] in COORD_NAMES:
        n_coord += 1
    if n_coord == 0:
        raise TruthError(f"{path}: missing coordinate column 'x'")
    fields = header[n_coord:]
    missing = [f for f in required if f not in fields]
    if missing:
        raise TruthError(f"{path}: missing truth column(s) {', '.join(missing)}")
    try:
        table = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise TruthError(f"{path}: non-numeric entry ({exc})") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise TruthError(f"{path}: ragged rows")
    axes = [np.unique(table[:, i]) for i in range(n_coord)]
    expected = tensor_points(axes)
    if expected.shape[0] != table.shape[0] or not np.array_equal(expected, table[:, :n_coord]):
        raise TruthError(f"{path}: grid is not complete and strictly sorted row-major")
    shape = tuple(a.size for a in axes)
    data = {f: table[:, n_coord + j].reshape(shape) for j, f in enumerate(fields)}
    return GridTruth(axes, data, header[:n_coord])


def write_fields_csv(path, coords: Sequence[str], points, values: dict[str, np.ndarray]) -> Path:
    """Write a row-major grid snapshot readable by :func:`load_truth_csv`."""
    path = Path(path)
    points = np.asarray(points)
    names = list(values)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(coords) + names)
        cols = [points[:, i] for i in range(points.shape[1])] + [np.asarray(values[k]) for k in names]
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])
    return path
