"""Benchmark problems: geometry, conditions, exact solutions and residuals."""

from .base import (
    BoundaryCondition,
    Box,
    CollocationSet,
    CollocationSpec,
    GridSpec,
    Polygon,
    Problem,
    ProblemError,
    constant_probe,
    random_boundary,
    random_interior,
    random_initial,
    sample_collocation,
    tensor_points,
    zero_probe,
)
from .flow_mixing import (
    VT_MAX,
    flow_mixing_divergence,
    flow_mixing_exact,
    flow_mixing_problem,
    flow_mixing_residual,
    flow_mixing_velocity,
    omega,
)
from .flow_mixing import exact_probe as flow_mixing_exact_probe
from .flow_mixing import velocity_probes
from .navier_stokes import bfs_inlet, bfs_problem, cavity_problem, ns_residuals, reattachment_points
from .ode import SOURCES, ode_exact_probe, ode_problem
from .truth import AnalyticTruth, GridTruth, GroundTruth, TruthError, load_truth_csv, write_fields_csv


def build_problem(spec: dict) -> Problem:
    """Construct a problem from its config section (``{"name": ..., ...}``)."""
    spec = dict(spec)
    name = spec.pop("name")
    spec.pop("truth_file", None)
    if name == "ode":
        return ode_problem(spec.get("source", "f1"), spec.get("n_points", 41), spec.get("amplitude", 1.0))
    if name == "flow-mixing":
        return flow_mixing_problem(tuple(spec.get("grid", (51, 51, 25))), spec.get("t_max", 4.0))
    if name == "cavity":
        return cavity_problem(spec.get("re", 400.0), spec.get("grid", 51))
    if name == "bfs":
        return bfs_problem(spec.get("re", 200.0), tuple(spec.get("grid", (400, 40))))
    raise ProblemError(f"unknown problem {name!r}")


def truth_for(problem: Problem, truth_file=None) -> GroundTruth | None:
    """The reference solution: a file if given, else the exact solution if known."""
    if truth_file is not None:
        return load_truth_csv(truth_file, required=problem.fields)
    if problem.exact is not None:
        return AnalyticTruth(problem.exact, problem.fields)
    return None
