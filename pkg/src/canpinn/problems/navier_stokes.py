"""Steady 2-D incompressible Navier-Stokes benchmarks."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..schemes import SchemeKind, _points, ask, convective_flux, first_derivative, second_derivative
from .base import BoundaryCondition, Box, CollocationSpec, GridSpec, Problem, ProblemError, on_value

NS_FIELDS = ("u", "v", "p")


def ns_residuals(fields: Mapping, x, scheme, inv_re) -> list:
    """[continuity, x-momentum, y-momentum] at points ``x`` (N, 2).

    ``inv_re`` may be a float or a node (inverse mode).
    """
    missing = [f for f in NS_FIELDS if f not in fields]
    if missing:
        raise ProblemError(f"Navier-Stokes residuals need heads u, v, p; missing {missing}")
    x = _points(x)
    u, v, p = fields["u"], fields["v"], fields["p"]
    dx, dy = scheme.delta[0], scheme.delta[1]
    # one centre pass carrying every derivative a stencil may read at x
    for f in (u, v, p):
        ask(f, x, (0, 1), scheme.diffusion is SchemeKind.AD)

    cont = first_derivative(scheme.continuity, u, x, 0, dx) + first_derivative(scheme.continuity, v, x, 1, dy)

    def momentum(phi, axis):
        conv = convective_flux(scheme.convection, u, phi, x, 0, dx) + convective_flux(scheme.convection, v, phi, x, 1, dy)
        lap = second_derivative(scheme.diffusion, phi, x, 0, dx) + second_derivative(scheme.diffusion, phi, x, 1, dy)
        grad_p = first_derivative(scheme.pressure, p, x, axis, scheme.delta[axis])
        return conv - inv_re * lap + grad_p

    return [cont, momentum(u, 0), momentum(v, 1)]


def _ns_residual(fields, x, scheme, scalars):
    return ns_residuals(fields, x, scheme, scalars["inv_Re"])


def cavity_problem(re: float = 400.0, grid: int = 51) -> Problem:
    """Lid-driven cavity on [0, 1] x [-1, 0] with the lid at y = 0.

    The lid condition is listed first, so it owns the two top corners.
    """
    lid = BoundaryCondition("lid", "dirichlet-value", ("u", "v"), lambda p: on_value(p, 1, 0.0), {"u": 1.0, "v": 0.0})
    walls = BoundaryCondition(
        "walls",
        "dirichlet-value",
        ("u", "v"),
        lambda p: on_value(p, 0, 0.0) | on_value(p, 0, 1.0) | on_value(p, 1, -1.0),
        {"u": 0.0, "v": 0.0},
    )
    h = 1.0 / (grid - 1)
    return Problem(
        name="cavity",
        inputs=("x", "y"),
        fields=NS_FIELDS,
        domain=Box((0.0, -1.0), (1.0, 0.0)),
        residual=_ns_residual,
        bcs=[lid, walls],
        default_delta=(h, h),
        default_collocation=CollocationSpec("grid", GridSpec((grid, grid))),
        eval_grid=GridSpec((101, 101)),
        scalars={"inv_Re": 1.0 / re},
        n_residuals=3,
        params={"name": "cavity", "re": re, "grid": grid},
    )


def bfs_inlet(y) -> np.ndarray:
    """Parabolic inlet above the step, peak 1.5 at y = 0.25, zero below y = 0."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y >= 0.0, 24.0 * y * (0.5 - y), 0.0)


def bfs_problem(re: float = 200.0, grid=(400, 40)) -> Problem:
    """Channel [0, 20] x [-0.5, 0.5] behind a half-height step at x = 0."""
    walls = BoundaryCondition(
        "walls",
        "dirichlet-value",
        ("u", "v"),
        lambda p: on_value(p, 1, -0.5) | on_value(p, 1, 0.5),
        {"u": 0.0, "v": 0.0},
    )
    inlet = BoundaryCondition(
        "inlet",
        "dirichlet-function",
        ("u", "v"),
        lambda p: on_value(p, 0, 0.0) & (np.asarray(p)[:, 1] >= 0.0),
        lambda p: {"u": bfs_inlet(np.asarray(p)[:, 1]), "v": np.zeros(len(p))},
    )
    step = BoundaryCondition(
        "step",
        "dirichlet-value",
        ("u", "v"),
        lambda p: on_value(p, 0, 0.0) & (np.asarray(p)[:, 1] < 0.0),
        {"u": 0.0, "v": 0.0},
    )
    outlet = BoundaryCondition("outlet", "neumann-zero", ("u", "v"), lambda p: on_value(p, 0, 20.0), axis=0)
    return Problem(
        name="bfs",
        inputs=("x", "y"),
        fields=NS_FIELDS,
        domain=Box((0.0, -0.5), (20.0, 0.5)),
        residual=_ns_residual,
        bcs=[walls, inlet, step, outlet],
        default_delta=(0.05, 0.026),
        default_collocation=CollocationSpec("grid", GridSpec(tuple(grid), True)),
        eval_grid=GridSpec((1600, 80), True),
        scalars={"inv_Re": 1.0 / re},
        n_residuals=3,
        params={"name": "bfs", "re": re, "grid": list(grid)},
    )


def reattachment_points(
    model,
    wall: str = "bottom",
    x_range: tuple[float, float] = (0.0, 20.0),
    y_walls: tuple[float, float] = (-0.5, 0.5),
    stations: int = 2000,
    tol: float = 1e-4,
) -> list[float]:
    """Abscissas where the wall shear du/dy changes sign, left to right.

    ``model`` is a probe of u, or a callable returning a dict of head jets.
    """
    if wall not in ("bottom", "top"):
        raise ValueError("wall must be 'bottom' or 'top'")
    y_w = y_walls[0] if wall == "bottom" else y_walls[1]

    def shear(xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        pts = np.stack([xs, np.full_like(xs, y_w)], axis=1)
        jet = model(pts)
        if isinstance(jet, Mapping):
            jet = jet["u"]
        return jet.d(1).value

    xs = np.linspace(x_range[0], x_range[1], stations)
    s = shear(xs)
    roots = []
    for i in range(stations - 1):
        if s[i] == 0.0:
            roots.append(float(xs[i]))
            continue
        if s[i] * s[i + 1] >= 0.0:
            continue
        lo, hi, s_lo = xs[i], xs[i + 1], s[i]
        while hi - lo >= tol:
            mid = 0.5 * (lo + hi)
            s_mid = shear(mid)[0]
            if s_mid == 0.0:
                lo = hi = mid
                break
            if s_mid * s_lo < 0.0:
                hi = mid
            else:
                lo, s_lo = mid, s_mid
        roots.append(float(0.5 * (lo + hi)))
    if s[-1] == 0.0:
        roots.append(float(xs[-1]))
    return roots
