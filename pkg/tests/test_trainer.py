import math

import numpy as np
import pytest

from canpinn.diff_engine import ParamStore, Tape
from canpinn.network import NetworkField, init_params, parse_topology, predict
from canpinn.problems import (
    AnalyticTruth,
    CollocationSpec,
    GridSpec,
    cavity_problem,
    flow_mixing_problem,
    ode_exact_probe,
    ode_problem,
    sample_collocation,
    zero_probe,
)
from canpinn.schemes import NUMERICAL_KINDS, SchemeConfig
from canpinn.trainer import (
    MIN_LR,
    AdamState,
    Batch,
    BatchSampler,
    InverseSpec,
    LossSpec,
    PlateauSchedule,
    PlateauScheduler,
    RunMetrics,
    TrainConfig,
    TrainingAborted,
    adam_step,
    assemble_loss,
    evaluate,
    make_observations,
    reduce_lr_on_plateau,
    train,
    train_inverse,
)


def scalar_store(value=0.0, n=1):
    return ParamStore.from_arrays({"w": np.full(n, float(value))})


# -- Adam -----------------------------------------------------------------------


def test_adam_first_step():
    store, state = adam_step(scalar_store(), np.array([1.0]), AdamState.zeros(1), 1e-3)
    assert store.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)
    assert state.t == 1


def test_adam_zero_gradient():
    store0 = scalar_store(0.5, 3)
    store, state = adam_step(store0, np.zeros(3), AdamState.zeros(3), 1e-2)
    assert np.array_equal(store.data, store0.data) and state.t == 1


def test_adam_two_steps_by_hand():
    lr = 1e-3
    store, state = adam_step(scalar_store(), np.array([1.0]), AdamState.zeros(1), lr)
    store, state = adam_step(store, np.array([1.0]), state, lr)
    # m1 = 0.1, v1 = 0.001, m2 = 0.19, v2 = 0.001999; both bias-corrected moments are 1
    assert state.m[0] == pytest.approx(0.19, abs=1e-15)
    assert state.v[0] == pytest.approx(0.001999, abs=1e-15)
    m_hat = 0.19 / (1 - 0.9**2)
    v_hat = 0.001999 / (1 - 0.999**2)
    # both are 1 in exact arithmetic; 1 - 0.999^2 rounds in the last bits
    assert m_hat == pytest.approx(1.0, abs=1e-13) and v_hat == pytest.approx(1.0, abs=1e-13)
    theta1 = -lr * 1.0 / (1.0 + 1e-8)
    theta2 = theta1 - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert store.data[0] == pytest.approx(theta2, abs=1e-15)


def test_adam_rejects_nan_with_slice():
    store = ParamStore.from_arrays({"a": np.zeros(2), "b": np.zeros(2)})
    with pytest.raises(TrainingAborted) as err:
        adam_step(store, np.array([0.0, 0.0, np.nan, 1.0]), AdamState.zeros(4), 1e-3, iteration=300)
    assert err.value.iteration == 300 and err.value.slices == ["b"]
    with pytest.raises(ValueError):
        adam_step(store, np.zeros(3), AdamState.zeros(4), 1e-3)


# -- plateau schedule -------------------------------------------------------------


def test_plateau_decreasing_loss_keeps_lr():
    assert reduce_lr_on_plateau([1.0 * 0.9**k for k in range(50)], 1e-3) == 1e-3


def test_plateau_flat_loss_halves():
    s = PlateauSchedule(0.5, 10)
    assert reduce_lr_on_plateau([1.0] * 11, 1e-3, s) == 5e-4
    assert reduce_lr_on_plateau([1.0] * 10, 1e-3, s) == 1e-3


def test_plateau_clamps_at_floor():
    sched = PlateauScheduler(1e-3)
    lrs = [sched.step(1.0) for _ in range(2000)]
    assert lrs[-1] == MIN_LR == 5e-6
    assert min(lrs) == 5e-6
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_plateau_threshold_is_relative():
    sched = PlateauScheduler(1e-3, PlateauSchedule(0.5, 2, 1e-2))
    for loss in (1.0, 0.995, 0.994):
        sched.step(loss)
    # improvements smaller than 1% do not count
    assert sched.lr == 5e-4


# -- loss assembly ----------------------------------------------------------------


def ode_batch(pde, bc=(0.0, 2 * np.pi)):
    return Batch(np.array(pde)[:, None], np.zeros((0, 1)), np.array(bc)[:, None])


def test_zero_network_loss():
    p = ode_problem("f1")
    total, parts = assemble_loss(p, {"u": zero_probe(1)}, ode_batch([0.0, np.pi / 2]), LossSpec(), p.default_scheme())
    assert float(total.value) == pytest.approx(0.5, abs=1e-15)
    assert parts["bc"] == 0.0 and parts["pde"] == pytest.approx(0.5)


def test_lambda_divides_pde_term():
    p = ode_problem("f1")
    probe = {"u": ode_exact_probe("f1", 0.7)}
    b = ode_batch([0.3, 1.0, 2.5], [0.0, 2 * np.pi])
    t1, parts1 = assemble_loss(p, probe, b, LossSpec(1.0), p.default_scheme())
    t2, parts2 = assemble_loss(p, probe, b, LossSpec(2.0), p.default_scheme())
    pde = parts1["pde"]
    assert float(t1.value) - float(t2.value) == pytest.approx(pde / 2, rel=1e-14)
    assert parts1["bc"] == parts2["bc"]


def test_exact_probe_loss_small():
    p = ode_problem("f1", 41)
    c = sample_collocation(p)
    b = Batch(c.interior, np.zeros((0, 1)), c.boundary)
    total, _ = assemble_loss(p, {"u": ode_exact_probe("f1")}, b, LossSpec(), p.default_scheme())
    assert float(total.value) < 5e-6


def test_empty_pde_batch_rejected():
    p = ode_problem("f1")
    with pytest.raises(ValueError):
        assemble_loss(p, {"u": zero_probe(1)}, ode_batch([]), LossSpec(), p.default_scheme())


def test_loss_weights():
    p = flow_mixing_problem((9, 9, 3))
    c = sample_collocation(p)
    b = Batch(c.interior[:10], c.initial[:5], c.boundary[:5])
    probe = {"u": zero_probe(3)}
    _, parts = assemble_loss(p, probe, b, LossSpec(), p.default_scheme())
    t, _ = assemble_loss(p, probe, b, LossSpec(1.0, 3.0, 0.5), p.default_scheme())
    assert float(t.value) == pytest.approx(parts["pde"] + 3 * parts["ic"] + 0.5 * parts["bc"], rel=1e-14)
    with pytest.raises(ValueError):
        LossSpec(lam=0.0)


@pytest.mark.parametrize("kind", ["ad"] + [k.token for k in NUMERICAL_KINDS])
def test_loss_gradient_matches_fd(kind):
    p = ode_problem("f2", 41)
    cfg = parse_topology("(x)-6-5-(u)")  # 52 parameters
    store = init_params(cfg, 3)
    assert 45 <= len(store) <= 60
    scheme = SchemeConfig(p.default_delta, kind)
    b = ode_batch([0.5, 1.7, 3.0, 4.4])

    def loss(data):
        tape = Tape()
        f = NetworkField(cfg, ParamStore(data, store.slices).nodes(tape)).fields()
        return tape, assemble_loss(p, f, b, LossSpec(), scheme)[0]

    tape, l0 = loss(store.data)
    g = tape.gradient(l0)
    h = 1e-6
    for i in range(len(store)):
        e = np.zeros(len(store))
        e[i] = h
        fd = (float(loss(store.data + e)[1].value) - float(loss(store.data - e)[1].value)) / (2 * h)
        assert abs(g[i] - fd) <= 1e-4 * max(abs(fd), 1e-3), i


# -- sampling ---------------------------------------------------------------------


def test_sampler_epochs_without_replacement():
    p = ode_problem("f1", 41)
    c = sample_collocation(p)
    s = BatchSampler(p, c, (6, 0, 2), np.random.default_rng(0))
    seen = np.concatenate([s.next().pde[:, 0] for _ in range(6)])
    assert len(np.unique(seen)) == 36
    b = s.next()
    assert len(b.bc) == 2 and len(b.ic) == 0


def test_sampler_resample_draws_fresh_points():
    p = cavity_problem()
    c = sample_collocation(p, CollocationSpec("resample"))
    s = BatchSampler(p, c, (20, 0, 5), np.random.default_rng(0))
    a, b = s.next(), s.next()
    assert a.pde.shape == (20, 2) and not np.array_equal(a.pde, b.pde)
    assert np.all(p.inside(a.pde, closed=False))


def test_sampler_missing_points():
    p = ode_problem("f1")
    with pytest.raises(ValueError):
        BatchSampler(p, sample_collocation(p), (6, 3, 2), np.random.default_rng(0))


# -- evaluation ---------------------------------------------------------------------


def test_evaluate_offsets():
    cfg = parse_topology("(x,y)-4-[(u), (v), (p)]")
    store = init_params(cfg, 0)
    p = cavity_problem()
    pts, _ = p.evaluation_points()
    pred = predict(cfg, store, pts)

    def shifted(points):
        q = predict(cfg, store, points)
        return {"u": q["u"] + 0.3, "v": q["v"], "p": q["p"] + 10.0}

    exact = evaluate(cfg, store, p, AnalyticTruth(lambda q: predict(cfg, store, q), ("u", "v", "p")))
    assert exact == {"mse.u": 0.0, "mse.v": 0.0, "mse.p": 0.0, "uv_mse": 0.0}
    m = evaluate(cfg, store, p, AnalyticTruth(shifted, ("u", "v", "p")))
    assert m["mse.u"] == pytest.approx(0.09, rel=1e-12) and m["mse.v"] == 0.0
    assert m["mse.p"] == pytest.approx(0.0, abs=1e-20)
    assert m["uv_mse"] == (m["mse.u"] + m["mse.v"]) / 2
    assert len(pred["u"]) == 101 * 101


def test_run_metrics_csv(tmp_path):
    m = RunMetrics(("u", "v"), ("inv_Re",))
    m.log(iteration=100, loss=0.5, lr=1e-3, inv_Re=0.01)
    m.log(iteration=200, loss=0.25, lr=1e-3, **{"mse.u": 1.0})
    with pytest.raises(ValueError):
        m.log(iteration=150, loss=0.1, lr=1e-3)
    with pytest.raises(KeyError):
        m.log(iteration=300, loss=0.1, lr=1e-3, bogus=1)
    text = m.write_csv(tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "iteration,loss,lr,mse.u,mse.v,uv_mse,inv_Re"
    assert text[1] == "100,0.5,0.001,,,,0.01"
    assert m.last("mse.u") == 1.0 and math.isnan(m.last("uv_mse"))


# -- training loops -----------------------------------------------------------------


def small_ode(iters=300, lr=5e-3, seed=0, **kw):
    p = ode_problem("f1", 41)
    net = parse_topology("(x)-16-8-(u)")
    return p, net, TrainConfig(max_iterations=iters, batch=(6, 0, 2), lr=lr, seed=seed, **kw)


def test_training_deterministic():
    p, net, cfg = small_ode()
    truth = AnalyticTruth(p.exact, p.fields)
    a = train(p, net, cfg, truth=truth)
    b = train(p, net, cfg, truth=truth)
    assert a.store.data.tobytes() == b.store.data.tobytes()
    assert a.metrics.rows == b.metrics.rows
    c = train(p, net, TrainConfig(max_iterations=300, batch=(6, 0, 2), lr=5e-3, seed=1), truth=truth)
    assert c.store.data.tobytes() != a.store.data.tobytes()


def test_training_reduces_loss():
    p, net, cfg = small_ode(2000)
    r = train(p, net, cfg)
    losses = r.metrics.column("loss")
    assert losses[-1] < 0.1 * losses[0]
    lr = r.metrics.column("lr")
    assert np.all(np.diff(lr) <= 0) and np.all(lr >= 5e-6)


def test_zero_iterations_keeps_initialisation():
    p, net, cfg = small_ode(0)
    r = train(p, net, cfg)
    assert r.iterations == 0 and r.store.data.tobytes() == init_params(net, 0).data.tobytes()


def test_zero_learning_rate_freezes_parameters():
    p, net, cfg = small_ode(3000, lr=0.0)
    r = train(p, net, cfg)
    assert r.store.data.tobytes() == init_params(net, 0).data.tobytes()
    assert np.all(r.metrics.column("lr") == 0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-6)


def test_window_chunking_equivalence():
    """Chunked window evaluation equals one-batch-at-a-time accumulation."""
    p, net, _ = small_ode()
    a = train(p, net, TrainConfig(max_iterations=200, batch=(6, 0, 2), chunk_points=6))
    b = train(p, net, TrainConfig(max_iterations=200, batch=(6, 0, 2), chunk_points=4096))
    assert np.allclose(a.store.data, b.store.data, rtol=1e-10, atol=1e-12)


def test_partial_last_window():
    p, net, cfg = small_ode(250)
    r = train(p, net, cfg)
    assert r.iterations == 250 and list(r.metrics.column("iteration")) == [100, 200, 250]


def test_budget_stop():
    p, net, cfg = small_ode(100000, budget_seconds=0.0)
    r = train(p, net, cfg)
    assert r.stopped == "budget" and r.iterations == 100


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort():
    p, net, cfg = small_ode(100, lr=1e300)
    p.scalars["c"] = float("nan")
    with pytest.raises(TrainingAborted):
        train(p, net, cfg)


def test_train_checks_network():
    p, _, cfg = small_ode()
    with pytest.raises(ValueError):
        train(p, parse_topology("(x,y)-4-(u)"), cfg)
    with pytest.raises(ValueError):
        train(p, parse_topology("(x)-4-(v)"), cfg)


def test_make_observations():
    p = ode_problem("f1", amplitude=2.0)
    truth = AnalyticTruth(p.exact, p.fields)
    pts, vals = make_observations(p, truth, 5, 0)
    assert pts.shape == (5, 1) and np.allclose(vals["u"], 2 * np.sin(pts[:, 0]))
    assert np.all(p.inside(pts, closed=False))
    q, _ = make_observations(p, truth, 5, 0)
    assert np.array_equal(pts, q)


def test_inverse_trajectory_logged():
    p = ode_problem("f1", 41, amplitude=2.0)
    truth = AnalyticTruth(p.exact, p.fields)
    pts, vals = make_observations(p, truth, 5, 0)
    inv = InverseSpec(pts, vals, {"c": 1.0})
    net = parse_topology("(x)-16-8-(u)")
    r = train_inverse(p, net, TrainConfig(max_iterations=500, batch=(6, 0, 2)), inv, truth=truth)
    traj = r.metrics.column("c")
    assert len(traj) == 5 and traj[-1] != 1.0 and r.inferred["c"] == traj[-1]
    with pytest.raises(ValueError):
        InverseSpec(pts, {"u": vals["u"][:3]}, {"c": 1.0})


def test_inverse_positive_projection():
    p = ode_problem("f1", 41, amplitude=-2.0)
    truth = AnalyticTruth(p.exact, p.fields)
    pts, vals = make_observations(p, truth, 5, 0)
    inv = InverseSpec(pts, vals, {"c": 1e-3})
    net = parse_topology("(x)-8-(u)")
    r = train_inverse(p, net, TrainConfig(max_iterations=300, batch=(6, 0, 2), lr=5e-2), inv)
    assert r.inferred["c"] >= 1e-12
