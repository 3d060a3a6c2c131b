"""Two-fluid mixing by a prescribed rotational velocity (pure convection).

u_t + a u_x + b u_y = 0 on [-4, 4]^2 x [0, 4], solved in the conservative
form u_t + (a u)_x + (b u)_y = u (a_x + b_y).
"""

from __future__ import annotations

import numpy as np

from ..diff_engine import Jet2, const, jcos, jsin, jtanh
from ..schemes import SchemeKind, _points, ask, convective_flux
from .base import BoundaryCondition, Box, CollocationSpec, GridSpec, Problem

VT_MAX = 0.385
_SERIES_R = 1e-2
# Taylor coefficients of sech^2(r) tanh(r) / r in even powers of r
_C = (1.0, -4.0 / 3.0, 17.0 / 15.0, -248.0 / 315.0, 1382.0 / 2835.0)


def _radial(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """g = v_t / (v_tmax r) with G1 = g'/r and G2 = (g'' - G1)/r^2.

    All three are smooth even functions of r, so the series branch near the
    origin avoids the removable singularities.
    """
    r = np.asarray(r, dtype=np.float64)
    c0, c2, c4, c6, c8 = _C
    r2 = r * r
    g_s = c0 + r2 * (c2 + r2 * (c4 + r2 * (c6 + r2 * c8)))
    g1_s = 2 * c2 + r2 * (4 * c4 + r2 * (6 * c6 + r2 * 8 * c8))
    g2_s = 8 * c4 + r2 * (24 * c6 + r2 * 48 * c8)
    small = r < _SERIES_R
    rs = np.where(small, 1.0, r)
    t = np.tanh(rs)
    s = 1.0 / np.cosh(rs) ** 2
    q = t / rs
    dq = (s * rs - t) / rs**2
    ds = -2.0 * s * t
    d2s = 4.0 * s * t * t - 2.0 * s * s
    d2q = ds / rs - 2.0 * dq / rs
    g = s * q
    dg = ds * q + s * dq
    d2g = d2s * q + 2.0 * ds * dq + s * d2q
    g1 = dg / rs
    g2 = (d2g - g1) / rs**2
    out = [np.where(small, a, b) / VT_MAX for a, b in ((g_s, g), (g1_s, g1), (g2_s, g2))]
    return out[0], out[1], out[2]


def omega(x, y) -> np.ndarray:
    """Angular velocity v_t / (v_tmax r), with the limit 1 / v_tmax at r = 0."""
    return _radial(np.hypot(x, y))[0]


def flow_mixing_velocity(x, y) -> tuple[np.ndarray, np.ndarray]:
    """(a, b) = omega(r) * (-y, x); zero at the origin."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g = omega(x, y)
    return -g * y, g * x


def flow_mixing_divergence(x, y) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (da/dx, db/dy); they cancel identically."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g1 = _radial(np.hypot(x, y))[1]
    xy = x * y
    return -(g1 * xy), g1 * xy


def flow_mixing_exact(x, y, t) -> np.ndarray:
    w = omega(x, y)
    return -np.tanh(0.5 * np.asarray(y) * np.cos(w * t) - 0.5 * np.asarray(x) * np.sin(w * t))


def _omega_jet(points: np.ndarray) -> Jet2:
    x, y = points[:, 0], points[:, 1]
    d = points.shape[1]
    g, g1, g2 = _radial(np.hypot(x, y))
    grad = np.zeros((d, len(x)))
    diag = np.zeros((d, len(x)))
    grad[0], grad[1] = g1 * x, g1 * y
    diag[0], diag[1] = g1 + g2 * x * x, g1 + g2 * y * y
    return Jet2(const(g), const(grad), const(diag))


def _coord(points, axis) -> Jet2:
    from ..diff_engine import coordinate

    return coordinate(points, axis)


def velocity_probes():
    """Field probes of a and b over (x, y[, t]) points."""

    def a(points):
        points = _points(points)
        return -(_omega_jet(points) * _coord(points, 1))

    def b(points):
        points = _points(points)
        return _omega_jet(points) * _coord(points, 0)

    return a, b


def exact_probe():
    """Jet probe of the exact solution over (x, y, t)."""

    def probe(points):
        points = _points(points)
        w = _omega_jet(points)
        x, y, t = (_coord(points, i) for i in range(3))
        wt = w * t
        return -jtanh(0.5 * (y * jcos(wt)) - 0.5 * (x * jsin(wt)))

    return probe


def flow_mixing_residual(fields, x, scheme, scalars=None):
    """u_t + (a u)_x + (b u)_y - u (a_x + b_y) with u_t by AD."""
    x = _points(x)
    probe = fields["u"]
    a, b = velocity_probes()
    # one centre pass serves u_t and any compact or AD stencil reading slopes here
    kind = scheme.convection
    u = ask(probe, x, (0, 1, 2) if kind.compact or kind is SchemeKind.AD else (2,))
    u_t = u.d(2)
    fx = convective_flux(scheme.convection, a, probe, x, 0, scheme.delta[0])
    fy = convective_flux(scheme.convection, b, probe, x, 1, scheme.delta[1])
    ax, by = flow_mixing_divergence(x[:, 0], x[:, 1])
    return [u_t + fx + fy - u.value * const(ax + by)]


def flow_mixing_problem(grid=(51, 51, 25), t_max: float = 4.0) -> Problem:
    """Domain [-4, 4]^2 x [0, t_max]; Dirichlet data and IC from the exact solution."""

    def target(p):
        p = np.asarray(p)
        return {"u": flow_mixing_exact(p[:, 0], p[:, 1], p[:, 2])}

    def spatial_boundary(p):
        p = np.asarray(p)
        return np.any(np.isclose(np.abs(p[:, :2]), 4.0, rtol=0, atol=1e-9), axis=1)

    bc = BoundaryCondition("walls", "dirichlet-function", ("u",), spatial_boundary, target)
    ic = BoundaryCondition("initial", "dirichlet-function", ("u",), lambda p: np.asarray(p)[:, 2] == 0.0, target)
    delta = 8.0 / (grid[0] - 1), 8.0 / (grid[1] - 1)
    return Problem(
        name="flow-mixing",
        inputs=("x", "y", "t"),
        fields=("u",),
        domain=Box((-4.0, -4.0, 0.0), (4.0, 4.0, t_max)),
        residual=flow_mixing_residual,
        bcs=[bc],
        initial=ic,
        time_axis=2,
        default_delta=delta,
        default_collocation=CollocationSpec("grid", GridSpec(tuple(grid))),
        eval_grid=GridSpec((81, 81, 11)),
        exact=target,
        n_residuals=1,
        params={"name": "flow-mixing", "grid": list(grid), "t_max": t_max},
    )
