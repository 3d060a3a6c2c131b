"""du/dx = c * f(x) on (0, 2*pi) with u(0) = u(2*pi) = 0."""

from __future__ import annotations

import numpy as np

from ..diff_engine import const, jsin
from ..schemes import first_derivative, jet_probe
from .base import BoundaryCondition, Box, CollocationSpec, GridSpec, Problem, on_value

TWO_PI = 2.0 * np.pi

SOURCES = {
    "f1": (lambda x: np.cos(x), lambda x: np.sin(x)),
    "f2": (lambda x: np.cos(x) + 2.0 * np.cos(2.0 * x), lambda x: np.sin(x) + np.sin(2.0 * x)),
}


def ode_exact_probe(source: str = "f1", amplitude: float = 1.0):
    """Jet probe of the exact solution (scaled by ``amplitude``)."""
    if source == "f1":
        return jet_probe(lambda x: amplitude * jsin(x))
    return jet_probe(lambda x: amplitude * (jsin(x) + jsin(2.0 * x)))


def ode_problem(source: str = "f1", n_points: int = 41, amplitude: float = 1.0) -> Problem:
    """ODE benchmark; ``n_points`` sets the default grid and stencil spacing.

    The source is multiplied by the scalar ``c``, whose true value is
    ``amplitude`` (the exact solution scales with it). The inverse toy
    problem treats ``c`` as unknown.
    """
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}; expected f1 or f2")
    f, exact = SOURCES[source]

    def residual(fields, x, scheme, scalars):
        # the wind is fixed at +1: the equation carries no advecting velocity
        du = first_derivative(scheme.convection, fields["u"], x, 0, scheme.delta[0], wind=1)
        c = scalars.get("c", 1.0)
        return [du - c * const(f(x[:, 0]))]

    walls = BoundaryCondition(
        "ends",
        "dirichlet-value",
        ("u",),
        lambda p: on_value(p, 0, 0.0) | on_value(p, 0, TWO_PI),
        {"u": 0.0},
    )
    delta = TWO_PI / (n_points - 1)
    return Problem(
        name=f"ode-{source}",
        inputs=("x",),
        fields=("u",),
        domain=Box((0.0,), (TWO_PI,)),
        residual=residual,
        bcs=[walls],
        default_delta=(delta,),
        default_collocation=CollocationSpec("grid", GridSpec((n_points,))),
        eval_grid=GridSpec((1001,)),
        exact=lambda p: {"u": amplitude * exact(np.asarray(p)[:, 0])},
        scalars={"c": float(amplitude)},
        n_residuals=1,
        params={"name": "ode", "source": source, "n_points": n_points, "amplitude": amplitude},
    )

