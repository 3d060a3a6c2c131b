import numpy as np
import pytest

from canpinn.analysis import NOMINAL_ORDER, TRUNCATION
from canpinn.diff_engine import Tape, constant_jet, coordinate, reduce_sum
from canpinn.network import NetworkField, init_params, parse_topology
from canpinn.problems import (
    VT_MAX,
    AnalyticTruth,
    BoundaryCondition,
    Box,
    CollocationSpec,
    GridSpec,
    GridTruth,
    Polygon,
    Problem,
    ProblemError,
    TruthError,
    bfs_inlet,
    bfs_problem,
    build_problem,
    cavity_problem,
    constant_probe,
    flow_mixing_divergence,
    flow_mixing_exact,
    flow_mixing_exact_probe,
    flow_mixing_problem,
    flow_mixing_velocity,
    load_truth_csv,
    ns_residuals,
    ode_exact_probe,
    ode_problem,
    omega,
    reattachment_points,
    sample_collocation,
    truth_for,
    write_fields_csv,
    zero_probe,
)
from canpinn.schemes import SchemeConfig, jet_probe

# sech^2(1) tanh(1) / 0.385, evaluated independently
V1 = (1.0 / np.cosh(1.0)) ** 2 * np.tanh(1.0) / 0.385


def value(node):
    return np.asarray(node.value)


# -- ODE --------------------------------------------------------------------------


def test_ode_zero_probe():
    for source, expected in (("f1", -1.0), ("f2", -3.0)):
        p = ode_problem(source)
        r = p.residuals({"u": zero_probe(1)}, np.array([[0.0]]), p.default_scheme("can"))[0]
        assert value(r)[0] == expected


def test_ode_exact_residual_bound():
    p = ode_problem("f1", 41)
    x = np.linspace(0.0, 2 * np.pi, 301)[:, None]
    r = p.residuals({"u": ode_exact_probe("f1")}, x, p.default_scheme("can"))[0]
    assert np.max(np.abs(value(r))) <= 2.1e-3


@pytest.mark.parametrize("kind", ["uw1", "uw2", "cd2", "can-uw2", "can-cd"])
@pytest.mark.parametrize("source", ["f1", "f2"])
def test_ode_exact_residual_within_leading_term(kind, source):
    """|residual| <= 2 |c_p| delta^p max|u^(p+1)| for the exact solution."""
    p = ode_problem(source, 161)
    d = p.default_delta[0]
    order = NOMINAL_ORDER[kind]
    x = np.linspace(0.0, 2 * np.pi, 257)[:, None]
    r = p.residuals({"u": ode_exact_probe(source)}, x, SchemeConfig((d,), kind))[0]
    # max |d^k/dx^k (sin x + sin 2x)| = 1 + 2^k; 1 for sin x
    bound_deriv = 1.0 if source == "f1" else 1.0 + 2.0 ** (order + 1)
    bound = 2 * abs(TRUNCATION[kind][order]) * d**order * bound_deriv
    assert np.max(np.abs(value(r))) <= bound


@pytest.mark.parametrize("kind", ["ad", "uw1", "uw2", "cd2", "can-uw2", "can-cd"])
def test_ode_residual_shift_invariant(kind, rng):
    p = ode_problem("f2", 41)
    x = rng.uniform(0, 2 * np.pi, size=(10, 1))
    base = jet_probe(lambda z: z * z * 0.1)
    shifted = jet_probe(lambda z: z * z * 0.1 + 3.7)
    s = SchemeConfig(p.default_delta, kind)
    a = value(p.residuals({"u": base}, x, s)[0])
    b = value(p.residuals({"u": shifted}, x, s)[0])
    assert np.allclose(a, b, atol=1e-12)


def test_ode_collocation():
    p = ode_problem("f1", 41)
    c = sample_collocation(p)
    assert len(c.interior) == 41
    assert np.allclose(np.diff(c.interior[:, 0]), 2 * np.pi / 40, rtol=0, atol=1e-14)
    assert np.allclose(c.boundary[:, 0], [0.0, 2 * np.pi])
    assert p.default_delta[0] == pytest.approx(2 * np.pi / 40)


def test_ode_boundary_targets_and_amplitude():
    p = ode_problem("f1", amplitude=2.0)
    assert p.scalars["c"] == 2.0
    assert p.exact(np.array([[np.pi / 2]]))["u"][0] == pytest.approx(2.0)
    t = p.boundary_targets(np.array([[0.0], [2 * np.pi]]))["u"]
    assert np.array_equal(t, [0.0, 0.0])
    with pytest.raises(ValueError):
        ode_problem("f3")


# -- flow mixing -------------------------------------------------------------------


def test_velocity_examples():
    a, b = flow_mixing_velocity(0.0, 0.0)
    assert a == 0.0 and b == 0.0
    a, b = flow_mixing_velocity(0.0, 1.0)
    assert a == pytest.approx(-V1, rel=1e-14) and b == 0.0
    assert a == pytest.approx(-0.8307792317522396, abs=1e-15)
    a, b = flow_mixing_velocity(1.0, 0.0)
    assert a == 0.0 and b == pytest.approx(V1, rel=1e-14)


def test_velocity_rotational_symmetry(rng):
    x, y = rng.uniform(-4, 4, size=(2, 100))
    a, b = flow_mixing_velocity(x, y)
    ar, br = flow_mixing_velocity(-y, x)
    assert np.max(np.abs(ar + b)) <= 1e-12 and np.max(np.abs(br - a)) <= 1e-12


def test_omega_series_matches_closed_form():
    r = np.array([1e-6, 1e-3, 9.99e-3, 1.001e-2, 0.5])
    closed = (1.0 / np.cosh(r)) ** 2 * np.tanh(r) / (r * VT_MAX)
    assert np.allclose(omega(r, 0 * r), closed, rtol=1e-13)
    assert omega(0.0, 0.0) == pytest.approx(1.0 / VT_MAX)


def test_divergence_cancels_and_matches_fd(rng):
    x, y = rng.uniform(-4, 4, size=(2, 50))
    ax, by = flow_mixing_divergence(x, y)
    assert np.array_equal(ax + by, np.zeros_like(x))
    h = 1e-6
    fd = (flow_mixing_velocity(x + h, y)[0] - flow_mixing_velocity(x - h, y)[0]) / (2 * h)
    assert np.allclose(ax, fd, atol=1e-8)


def test_exact_solution_examples(rng):
    y = rng.uniform(-4, 4, size=10)
    x = rng.uniform(-4, 4, size=10)
    assert np.allclose(flow_mixing_exact(x, y, 0.0), -np.tanh(y / 2), atol=1e-15)
    assert flow_mixing_exact(0.0, 2.0, 0.0) == pytest.approx(-0.7615941559557649, abs=1e-15)
    for t in (0.0, 1.0, 4.0):
        assert flow_mixing_exact(0.0, 0.0, t) == 0.0


def test_exact_probe_jets_match_fd(rng):
    pts = rng.uniform([-3, -3, 0], [3, 3, 4], size=(20, 3))
    jet = flow_mixing_exact_probe()(pts)
    f = lambda p: flow_mixing_exact(p[:, 0], p[:, 1], p[:, 2])  # noqa: E731
    h = 1e-4
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd1 = (f(pts + e) - f(pts - e)) / (2 * h)
        fd2 = (f(pts + e) - 2 * f(pts) + f(pts - e)) / h**2
        assert np.allclose(jet.grad.value[axis], fd1, atol=1e-7)
        assert np.allclose(jet.diag2.value[axis], fd2, atol=1e-5)


@pytest.mark.parametrize("kind", ["uw2", "can-uw2", "can-cd"])
def test_flow_mixing_exact_residual(kind, rng):
    p = flow_mixing_problem()
    pts = rng.uniform([-4, -4, 0], [4, 4, 4], size=(100, 3))
    s = SchemeConfig((1e-4, 1e-4), kind)
    r = value(p.residuals({"u": flow_mixing_exact_probe()}, pts, s)[0])
    assert np.max(np.abs(r)) < 1e-6


def test_flow_mixing_zero_probe(rng):
    p = flow_mixing_problem()
    pts = rng.uniform([-4, -4, 0], [4, 4, 4], size=(10, 3))
    r = value(p.residuals({"u": zero_probe(3)}, pts, p.default_scheme("can"))[0])
    assert np.array_equal(r, np.zeros(10))


def test_flow_mixing_constant_probe(rng):
    # the flux imbalance c (a_e - a_w) / delta + ... is a truncation error of
    # size C delta^2, so the 1e-10 c bound needs delta of order 1e-5
    p = flow_mixing_problem()
    pts = rng.uniform([-4, -4, 0], [4, 4, 4], size=(10, 3))
    c = 2.5
    s = SchemeConfig((1e-5, 1e-5), "can-uw2")
    r = value(p.residuals({"u": constant_probe(c, 3)}, pts, s)[0])
    assert np.max(np.abs(r)) < 1e-10 * c


def test_flow_mixing_collocation_counts():
    p = flow_mixing_problem((33, 33, 9))
    c = sample_collocation(p)
    assert len(c.interior) == 33 * 33 * 9
    assert len(c.initial) == 33 * 33
    assert len(c.boundary) == (4 * 33 - 4) * 8
    assert np.all(c.initial[:, 2] == 0.0) and np.all(c.boundary[:, 2] > 0.0)
    assert p.default_delta == (0.25, 0.25)
    assert flow_mixing_problem().default_delta == (0.16, 0.16)


def test_flow_mixing_boundary_targets_are_exact():
    p = flow_mixing_problem((9, 9, 3))
    c = sample_collocation(p)
    t = p.boundary_targets(c.boundary)["u"]
    assert np.allclose(t, flow_mixing_exact(c.boundary[:, 0], c.boundary[:, 1], c.boundary[:, 2]))


# -- Navier-Stokes ----------------------------------------------------------------


def ns_fields(u, v, p):
    return {"u": jet_probe(u), "v": jet_probe(v), "p": jet_probe(p)}


def const_fn(c):
    return lambda x, y: constant_jet(np.full(x.value.value.shape, float(c)), 2)


@pytest.mark.parametrize("preset", ["a", "n", "can"])
def test_ns_trivial_fields(preset, rng):
    pts = rng.uniform(-1, 1, size=(10, 2))
    s = cavity_problem().default_scheme(preset)
    for c in (0.0, 1.7):
        r = ns_residuals(ns_fields(const_fn(c), const_fn(0.0), const_fn(3.0)), pts, s, 0.01)
        for comp in r:
            assert np.max(np.abs(value(comp))) < 1e-12


@pytest.mark.parametrize("delta", [0.01, 0.1, 0.37])
@pytest.mark.parametrize("preset", ["a", "n", "can"])
def test_ns_poiseuille(delta, preset, rng):
    inv_re = 0.05
    pts = rng.uniform(-1, 1, size=(20, 2))
    fields = ns_fields(lambda x, y: 1.0 - y * y, const_fn(0.0), lambda x, y: -2.0 * inv_re * x)
    s = cavity_problem().default_scheme(preset)
    s = SchemeConfig((delta, delta), s.convection, s.pressure, s.diffusion, s.continuity)
    for comp in ns_residuals(fields, pts, s, inv_re):
        assert np.max(np.abs(value(comp))) < 1e-12


def test_ns_missing_head():
    with pytest.raises(ProblemError):
        ns_residuals({"u": zero_probe(2), "v": zero_probe(2)}, np.zeros((1, 2)), cavity_problem().default_scheme(), 0.1)


def test_ns_inverse_scalar_differentiable():
    cfg = parse_topology("(x,y)-8-[(u), (v), (p)]")
    store = init_params(cfg, 0).add_scalar("inv_Re", 0.01)
    tape = Tape()
    nodes = store.nodes(tape)
    field = NetworkField(cfg, nodes)
    pts = np.array([[0.3, -0.4], [0.6, -0.2]])
    r = ns_residuals(field.fields(), pts, cavity_problem(grid=11).default_scheme(), nodes["inv_Re"])
    g = tape.gradient(reduce_sum(r[1] * r[1]))
    off, _ = store.slices["inv_Re"]
    assert g[off] != 0.0


def test_cavity_conditions():
    p = cavity_problem()
    pts = np.array([[0.5, 0.0], [0.0, -0.5], [0.0, 0.0], [1.0, 0.0], [1.0, -1.0]])
    t = p.boundary_targets(pts)
    assert np.array_equal(t["u"], [1, 0, 1, 1, 0]) and np.array_equal(t["v"], [0, 0, 0, 0, 0])
    assert np.all(np.isnan(t["p"]))
    with pytest.raises(ProblemError):
        p.boundary_targets(np.array([[0.5, -0.5]]))


def test_cavity_collocation():
    c = sample_collocation(cavity_problem())
    assert len(c.interior) == 2601 and len(c.boundary) == 200
    assert cavity_problem().default_delta == (0.02, 0.02)


def test_bfs_inlet_profile():
    assert bfs_inlet(0.25) == pytest.approx(1.5)
    assert bfs_inlet(0.0) == 0.0 and bfs_inlet(0.5) == 0.0 and bfs_inlet(-0.25) == 0.0
    p = bfs_problem()
    pts = np.array([[0.0, 0.25], [0.0, -0.25], [10.0, 0.5], [20.0, 0.1]])
    t = p.boundary_targets(pts)
    assert t["u"][0] == pytest.approx(1.5) and t["u"][1] == 0.0 and t["u"][2] == 0.0
    assert np.isnan(t["u"][3])
    assert np.all(t["v"][:3] == 0.0)


def test_bfs_outlet_is_zero_gradient():
    p = bfs_problem()
    pts = np.array([[20.0, 0.1], [20.0, -0.2]])
    ramp = {"u": jet_probe(lambda x, y: 3.0 * y), "v": zero_probe(2), "p": zero_probe(2)}
    assert float(p.boundary_loss(ramp, pts).value) == 0.0
    slope = {"u": jet_probe(lambda x, y: 2.0 * x), "v": zero_probe(2), "p": zero_probe(2)}
    assert float(p.boundary_loss(slope, pts).value) == pytest.approx(4.0)


def test_bfs_collocation():
    p = bfs_problem()
    c = sample_collocation(p)
    assert len(c.interior) == 16000
    assert np.all(p.inside(c.interior, closed=False))
    assert len(c.boundary) == 2 * 400 + 2 * 40


def synthetic(root, y_wall):
    return jet_probe(lambda x, y: (x - root) * (y - y_wall))


def test_reattachment_single_root():
    assert reattachment_points(synthetic(2.0, -0.5), "bottom") == [pytest.approx(2.0, abs=1e-4)]
    assert reattachment_points(synthetic(7.3, 0.5), "top") == [pytest.approx(7.3, abs=1e-4)]


def test_reattachment_monotone_and_multiple():
    assert reattachment_points(jet_probe(lambda x, y: (x + 1.0) * y), "bottom") == []
    probe = jet_probe(lambda x, y: (x - 2.0) * (x - 9.0) * y)
    assert reattachment_points(probe, "bottom") == [pytest.approx(2.0, abs=1e-4), pytest.approx(9.0, abs=1e-4)]
    with pytest.raises(ValueError):
        reattachment_points(probe, "left")


def test_reattachment_accepts_field_dict():
    def model(points):
        return {"u": synthetic(4.0, -0.5)(points)}

    assert reattachment_points(model) == [pytest.approx(4.0, abs=1e-4)]


# -- geometry and sampling --------------------------------------------------------


def l_shape():
    return Polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])


def test_polygon_inside_and_boundary():
    poly = l_shape()
    assert np.array_equal(poly.contains(np.array([[0.5, 0.5], [1.5, 1.5], [0.5, 1.5]])), [True, False, True])
    b = poly.boundary_points(0.25)
    assert np.all(poly.on_boundary(b))


def polygon_problem():
    bc = BoundaryCondition("all", "dirichlet-value", ("u",), lambda p: np.ones(len(p), bool), {"u": 0.0})
    return Problem(
        name="l-shape",
        inputs=("x", "y"),
        fields=("u",),
        domain=Box((0.0, 0.0), (2.0, 2.0)),
        residual=lambda f, x, s, sc: [f["u"](x).value],
        bcs=[bc],
        default_delta=(0.1, 0.1),
        default_collocation=CollocationSpec("random", None, 500, 40),
        eval_grid=GridSpec((11, 11)),
        polygon=l_shape(),
    )


def test_polygon_random_sampling():
    p = polygon_problem()
    c = sample_collocation(p, seed=3)
    assert len(c.interior) == 500 and len(c.boundary) == 40
    assert np.all(l_shape().contains(c.interior))
    assert np.all(l_shape().on_boundary(c.boundary))


def test_polygon_grid_sampling():
    p = polygon_problem()
    c = sample_collocation(p, CollocationSpec("grid", GridSpec((21, 21))))
    assert np.all(l_shape().contains(c.interior)) and np.all(l_shape().on_boundary(c.boundary))


def test_random_sampling_deterministic():
    p = cavity_problem()
    spec = CollocationSpec("random", None, 475, 25)
    a, b = sample_collocation(p, spec, 1), sample_collocation(p, spec, 1)
    assert np.array_equal(a.interior, b.interior) and np.array_equal(a.boundary, b.boundary)
    assert not np.array_equal(a.interior, sample_collocation(p, spec, 2).interior)
    assert np.all(p.inside(a.interior, closed=False))
    p.boundary_targets(a.boundary)  # every point owned by a condition


def test_random_collocation_time_problem():
    p = flow_mixing_problem((9, 9, 3))
    c = sample_collocation(p, CollocationSpec("random", None, 470, 15, 15), 0)
    assert (len(c.interior), len(c.boundary), len(c.initial)) == (470, 15, 15)
    assert np.all(c.initial[:, 2] == 0.0)
    assert np.all(np.isclose(np.max(np.abs(c.boundary[:, :2]), axis=1), 4.0))


def test_spacing_larger_than_domain():
    with pytest.raises(ProblemError):
        sample_collocation(ode_problem(), CollocationSpec("grid", GridSpec((1,))))


def test_build_problem():
    assert build_problem({"name": "ode", "source": "f2", "n_points": 81}).default_delta[0] == pytest.approx(2 * np.pi / 80)
    assert build_problem({"name": "cavity", "re": 100}).scalars["inv_Re"] == 0.01
    with pytest.raises(ProblemError):
        build_problem({"name": "pipe"})


# -- ground truth ------------------------------------------------------------------


def test_grid_truth_round_trip(tmp_path):
    p = cavity_problem()
    axes = [np.linspace(0, 1, 5), np.linspace(-1, 0, 4)]
    from canpinn.problems import tensor_points

    pts = tensor_points(axes)
    vals = {"u": pts[:, 0] + 2 * pts[:, 1], "v": pts[:, 0] * 0, "p": pts[:, 1] ** 2}
    path = write_fields_csv(tmp_path / "t.csv", ("x", "y"), pts, vals)
    truth = load_truth_csv(path, required=p.fields)
    q = np.array([[0.33, -0.71]])
    # bilinear interpolation is exact on bilinear data
    assert truth.values(q)["u"][0] == pytest.approx(0.33 - 1.42, abs=1e-14)
    with pytest.raises(TruthError):
        truth.values(np.array([[1.5, -0.5]]))


def test_truth_validation(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("x,y,u\n0,0,1\n1,0,2\n0,1,3\n1,1,4\n")
    with pytest.raises(TruthError, match="sorted"):
        load_truth_csv(f)
    f.write_text("x,y,u\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n")
    with pytest.raises(TruthError, match="missing truth column"):
        load_truth_csv(f, required=("u", "v"))
    f.write_text("x,u\n0,1\n0.5,x\n")
    with pytest.raises(TruthError):
        load_truth_csv(f)
    with pytest.raises(TruthError):
        GridTruth([np.array([0.0, 0.0])], {"u": np.zeros(2)})


def test_truth_for():
    assert isinstance(truth_for(ode_problem()), AnalyticTruth)
    assert truth_for(cavity_problem()) is None


@pytest.mark.parametrize(
    "problem, topology, pts",
    [
        (ode_problem("f2", 41), "(x)-4-(u)", np.array([[0.4], [2.0]])),
        (flow_mixing_problem((9, 9, 3)), "(x,y,t)-4-(u)", np.array([[0.5, -1.0, 1.0], [2.0, 1.0, 3.0]])),
        (cavity_problem(grid=11), "(x,y)-4-[(u), (v), (p)]", np.array([[0.3, -0.4], [0.7, -0.9]])),
    ],
)
def test_residuals_differentiable(problem, topology, pts):
    from canpinn.diff_engine import ParamStore

    cfg = parse_topology(topology)
    store = init_params(cfg, 1)
    scheme = problem.default_scheme("can")

    def loss(data):
        tape = Tape()
        field = NetworkField(cfg, ParamStore(data, store.slices).nodes(tape))
        total = None
        for r in problem.residuals(field.fields(), pts, scheme):
            s = reduce_sum(r * r)
            total = s if total is None else total + s
        return tape, total

    tape, l0 = loss(store.data)
    g = tape.gradient(l0)
    h = 1e-6
    for i in range(len(store)):
        e = np.zeros(len(store))
        e[i] = h
        fd = (float(loss(store.data + e)[1].value) - float(loss(store.data - e)[1].value)) / (2 * h)
        assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-2)


@pytest.mark.parametrize(
    "name, scheme",
    [
        ("flow-mixing", SchemeConfig((0.1, 0.1), "can-uw2")),
        ("flow-mixing", SchemeConfig((0.1, 0.1), "uw2")),
        ("flow-mixing", SchemeConfig((0.1, 0.1), "ad")),
        ("cavity", SchemeConfig.can_pinn((0.05, 0.05))),
        ("cavity", SchemeConfig.a_pinn((0.05, 0.05))),
    ],
)
def test_partial_requests_match_full_jets(rng, name, scheme):
    p = build_problem({"name": name})
    topo = "(x,y,t)-16-8-(u)" if name == "flow-mixing" else "(x,y)-16-[8-(u), 8-(v), 8-(p)]"
    cfg = parse_topology(topo)
    store = init_params(cfg, 1)
    lo, hi = np.asarray(p.domain.lower), np.asarray(p.domain.upper)
    x = lo + (hi - lo) * rng.uniform(size=(20, len(lo)))
    partial = NetworkField(cfg, store).fields()
    full_field = NetworkField(cfg, store)
    full = {h: (lambda pts, h=h: full_field(pts)[h]) for h in cfg.head_names}
    for a, b in zip(p.residuals(partial, x, scheme), p.residuals(full, x, scheme)):
        assert np.allclose(a.value, b.value, rtol=1e-12, atol=1e-12)
