"""Command-line front end.

Commands: ``train``, ``inverse``, ``analyze``, ``order-check``, ``eval``.
Exit codes: 0 success, 1 configuration or input error, 2 training aborted
on a non-finite loss or gradient.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import analysis
from .network import NetworkConfig, NetworkField, load_checkpoint, predict, save_checkpoint
from .problems import ProblemError, build_problem, load_truth_csv, reattachment_points, truth_for, write_fields_csv
from .problems.base import CollocationSpec
from .schemes import SchemeConfig
from .trainer import (
    InverseSpec,
    LossSpec,
    PlateauSchedule,
    TrainConfig,
    TrainingAborted,
    evaluate,
    make_observations,
    train,
)

log = logging.getLogger("canpinn")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
CONFIG_DIR = Path(__file__).with_name("configs")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 0}
_SCHEME = {"type": "string", "enum": ["ad", "uw1", "uw2", "cd2", "can-uw2", "can-cd"]}


def _obj(props: dict, required: Sequence[str] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "problem": _obj(
            {
                "name": {"enum": ["ode", "flow-mixing", "cavity", "bfs"]},
                "source": {"enum": ["f1", "f2"]},
                "n_points": {"type": "integer", "minimum": 2},
                "amplitude": _NUM,
                "re": _POS,
                "grid": {"oneOf": [{"type": "integer", "minimum": 2}, {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "t_max": _POS,
                "truth_file": {"type": "string"},
            },
            ["name"],
        ),
        "network": _obj(
            {
                "topology": {"type": "string"},
                "sigma": _POS,
                "sinusoidal_first": {"type": "boolean"},
                "input_bounds": {"type": "array", "items": {"type": "array", "items": _NUM}, "minItems": 2, "maxItems": 2},
            },
            ["topology"],
        ),
        "scheme": _obj(
            {
                "preset": {"enum": ["a", "n", "can"]},
                "delta": {"type": "array", "items": _POS},
                "convection": _SCHEME,
                "pressure": _SCHEME,
                "diffusion": {"enum": ["ad", "cd2"]},
                "continuity": _SCHEME,
            }
        ),
        "training": _obj(
            {
                "max_iterations": _INT,
                "batch": {"type": "array", "items": _INT, "minItems": 3, "maxItems": 3},
                "lr": {"type": "number", "minimum": 0},
                "window": {"type": "integer", "minimum": 1},
                "schedule": _obj({"factor": _POS, "patience": _INT, "threshold": {"type": "number", "minimum": 0}, "min_lr": _POS}),
                "collocation": _obj(
                    {
                        "kind": {"enum": ["grid", "random", "resample"]},
                        "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "cell_centered": {"oneOf": [{"type": "boolean"}, {"type": "array", "items": {"type": "boolean"}}]},
                        "n_interior": _INT,
                        "n_boundary": _INT,
                        "n_initial": _INT,
                    }
                ),
                "eval_every": {"type": "integer", "minimum": 1},
                "chunk_points": {"type": "integer", "minimum": 1},
                "budget_minutes": _POS,
            }
        ),
        "loss": _obj({"lambda": _POS, "ic_weight": {"type": "number", "minimum": 0}, "bc_weight": {"type": "number", "minimum": 0}, "data_weight": {"type": "number", "minimum": 0}}),
        "inverse": _obj(
            {
                "n_observations": {"type": "integer", "minimum": 1},
                "observation_seed": _INT,
                "fields": {"type": "array", "items": {"type": "string"}},
                "trainable": {"type": "object", "additionalProperties": _POS, "minProperties": 1},
                "data_weight": {"type": "number", "minimum": 0},
            },
            ["n_observations", "trainable"],
        ),
        "output_dir": {"type": "string"},
        "seeds": {"type": "array", "items": _INT, "minItems": 1},
    },
    ["problem", "network"],
)


class ConfigError(ValueError):
    pass


@dataclass
class RunPlan:
    """A validated config turned into library objects (one seed)."""

    raw: dict
    base_dir: Path

    def problem(self):
        return build_problem(self.raw["problem"])

    def truth_file(self) -> Path | None:
        tf = self.raw["problem"].get("truth_file")
        if tf is None:
            return None
        p = Path(tf)
        return p if p.is_absolute() else self.base_dir / p

    def network(self) -> NetworkConfig:
        n = self.raw["network"]
        return NetworkConfig.parse(
            n["topology"],
            sigma=n.get("sigma", 1.0),
            sinusoidal_first=n.get("sinusoidal_first", True),
            input_bounds=n.get("input_bounds"),
        )

    def scheme(self, problem) -> SchemeConfig:
        s = dict(self.raw.get("scheme", {}))
        delta = tuple(s.pop("delta", problem.default_delta))
        preset = s.pop("preset", "can")
        base = {"a": SchemeConfig.a_pinn, "n": SchemeConfig.n_pinn, "can": SchemeConfig.can_pinn}[preset](delta)
        return SchemeConfig.from_dict({**base.to_dict(), **s, "delta": list(delta)})

    def train_config(self, problem, seed: int) -> TrainConfig:
        t = self.raw.get("training", {})
        sched = PlateauSchedule(**t.get("schedule", {}))
        colloc = CollocationSpec.from_dict(t["collocation"]) if "collocation" in t else None
        budget = t.get("budget_minutes")
        return TrainConfig(
            max_iterations=t.get("max_iterations", 100_000),
            batch=tuple(t.get("batch", (6, 0, 2))),
            lr=t.get("lr", 5e-3),
            schedule=sched,
            window=t.get("window", 100),
            seed=seed,
            scheme=self.scheme(problem),
            collocation=colloc,
            eval_every=t.get("eval_every", 10),
            chunk_points=t.get("chunk_points", 1024),
            budget_seconds=None if budget is None else 60.0 * budget,
        )

    def loss(self) -> LossSpec:
        return LossSpec.from_dict(self.raw.get("loss", {}))

    @property
    def seeds(self) -> list[int]:
        return list(self.raw.get("seeds", [0]))


def load_config(path) -> RunPlan:
    """Parse and validate a run config; raises ConfigError with a diagnostic."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: invalid config at {where}: {e.message}")
    plan = RunPlan(raw, path.parent)
    try:
        # constructing every object surfaces semantic errors before compute
        problem = plan.problem()
        net = plan.network()
        plan.train_config(problem, plan.seeds[0])
        plan.loss()
        if tuple(net.inputs) != problem.inputs:
            raise ConfigError(f"{path}: network inputs {net.inputs} do not match problem inputs {problem.inputs}")
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return plan


# ---------------------------------------------------------------------------
# train / inverse
# ---------------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def run_one(plan: RunPlan, seed: int, out: Path, inverse: bool) -> dict:
    """Train one seed and write its artifacts into ``out``."""
    problem = plan.problem()
    net = plan.network()
    cfg = plan.train_config(problem, seed)
    loss = plan.loss()
    tf = plan.truth_file()
    truth = truth_for(problem, tf)
    inv = None
    if inverse:
        spec = plan.raw["inverse"]
        if truth is None:
            raise ConfigError("inverse runs need a ground truth (truth_file or an exact solution)")
        pts, vals = make_observations(problem, truth, spec["n_observations"], spec.get("observation_seed", seed), spec.get("fields"))
        inv = InverseSpec(pts, vals, dict(spec["trainable"]), spec.get("data_weight", 100.0))
    t0 = time.monotonic()
    result = train(problem, net, cfg, loss, truth, inv)
    wall = time.monotonic() - t0
    out.mkdir(parents=True, exist_ok=True)
    result.metrics.write_csv(out / "metrics.csv")
    pts, _ = problem.evaluation_points()
    write_fields_csv(out / "fields.csv", problem.inputs, pts, predict(net, result.store, pts))
    save_checkpoint(out / "checkpoint", net, result.store, {"problem": plan.raw["problem"]})
    summary = {
        "seed": seed,
        "problem": plan.raw["problem"],
        "network": net.to_dict(),
        "training": cfg.to_dict(),
        "loss": loss.to_dict(),
        "iterations": result.iterations,
        "stopped": result.stopped,
        "final_loss": result.final_loss,
        "final_metrics": result.final,
        "inferred": result.inferred,
    }
    if inv is not None:
        summary["observations"] = {"points": inv.points.tolist(), "values": {k: v.tolist() for k, v in inv.values.items()}}
    _write_json(out / "run.json", summary)
    # wall time lives apart so the other files are byte-reproducible
    _write_json(out / "timing.json", {"wall_seconds": wall})
    return summary


def _run_seed(args):
    plan, seed, out, inverse = args
    try:
        return seed, run_one(plan, seed, out, inverse), None
    except TrainingAborted as exc:
        return seed, None, f"aborted: {exc} (slices {exc.slices})"


def _summarise(summaries: list[dict]) -> dict:
    keys = sorted({k for s in summaries for k in s["final_metrics"]})
    med = {k: float(np.median([s["final_metrics"][k] for s in summaries if k in s["final_metrics"]])) for k in keys}
    return {
        "seeds": [s["seed"] for s in summaries],
        "final_loss": [s["final_loss"] for s in summaries],
        "median": med,
        "inferred": {s["seed"]: s["inferred"] for s in summaries if s["inferred"]},
    }


def cmd_train(args, inverse: bool = False) -> int:
    try:
        plan = load_config(args.config)
    except (ConfigError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if inverse and "inverse" not in plan.raw:
        print(f"error: {args.config}: inverse runs need an 'inverse' section", file=sys.stderr)
        return EXIT_CONFIG
    if args.budget_minutes is not None:
        plan.raw.setdefault("training", {})["budget_minutes"] = args.budget_minutes
    if args.truth:
        plan.raw["problem"]["truth_file"] = str(Path(args.truth).resolve())
    tf = plan.truth_file()
    if tf is not None:
        try:
            load_truth_csv(tf, required=plan.problem().fields)
        except (OSError, ProblemError) as exc:
            print(f"error: ground truth {tf}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    out = Path(args.out or plan.raw.get("output_dir") or Path("runs") / Path(args.config).stem)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"error: output directory {out} exists; pass --force to overwrite", file=sys.stderr)
            return EXIT_CONFIG
        shutil.rmtree(out)
    seeds = [args.seed] if args.seed is not None else plan.seeds
    jobs = [(plan, s, out / f"seed_{s}", inverse) for s in seeds]
    if args.parallel and len(jobs) > 1:
        with multiprocessing.get_context("fork").Pool(min(len(jobs), multiprocessing.cpu_count())) as pool:
            results = pool.map(_run_seed, jobs)
    else:
        results = [_run_seed(j) for j in jobs]
    summaries, aborted = [], []
    for seed, summary, err in results:
        if err:
            print(f"seed {seed}: {err}", file=sys.stderr)
            aborted.append(seed)
        else:
            summaries.append(summary)
            fm = " ".join(f"{k}={v:.3e}" for k, v in summary["final_metrics"].items())
            inf = " ".join(f"{k}={v:.6g}" for k, v in summary["inferred"].items())
            print(f"seed {seed}: loss={summary['final_loss']:.3e} {fm} {inf}".rstrip())
    if summaries:
        _write_json(out / "summary.json", _summarise(summaries))
    return EXIT_ABORT if aborted else EXIT_OK


# ---------------------------------------------------------------------------
# analysis commands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    kinds = [k.strip() for k in args.schemes.split(",") if k.strip()]
    try:
        curve = analysis.dispersion_curve(kinds, args.n)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        curve.write_csv(args.out)
    else:
        print(",".join(curve.columns()))
        for row in curve.rows():
            print(",".join(analysis.fmt(v) for v in row))
    return EXIT_OK


def cmd_order_check(args) -> int:
    try:
        deltas = [float(d) for d in args.deltas.split(",")] if args.deltas else (
            [0.5, 0.25, 0.125, 0.0625] if args.function == "cubic" else [0.2, 0.1, 0.05, 0.025]
        )
        report = analysis.order_check(args.scheme, args.function, deltas, args.x0, args.coef_delta)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.table())
    return EXIT_OK if report.passed else EXIT_CONFIG


def cmd_eval(args) -> int:
    try:
        net, store, extra = load_checkpoint(args.checkpoint)
        problem = build_problem(extra["problem"])
        truth = truth_for(problem, args.truth)
        if truth is None:
            raise ProblemError("no ground truth given and the problem has no exact solution")
        metrics = evaluate(net, store, problem, truth)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = {"checkpoint": str(args.checkpoint), "metrics": metrics}
    for k, v in metrics.items():
        print(f"{k} {analysis.fmt(v)}")
    if problem.name == "bfs":
        field = NetworkField(net, store).probe("u")
        report["reattachment"] = {w: reattachment_points(field, w) for w in ("bottom", "top")}
        for w, xs in report["reattachment"].items():
            print(f"{w} wall sign changes: " + ", ".join(f"{x:.4f}" for x in xs))
    out = Path(args.out) if args.out else Path(str(args.checkpoint).removesuffix(".json")).with_name("eval.json")
    _write_json(out, report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="canpinn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("train", "inverse"):
        p = sub.add_parser(name, help=f"{name} from a run config")
        p.add_argument("--config", required=True, help="run-config JSON (or the name of a shipped config)")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
        p.add_argument("--parallel", action="store_true", help="one process per seed")
        p.add_argument("--budget-minutes", type=float, help="stop each run after this wall-clock time")
        p.add_argument("--truth", help="ground-truth CSV, overriding the config's truth_file")
    p = sub.add_parser("analyze", help="dispersion/dissipation curves as CSV")
    p.add_argument("--schemes", default=",".join(analysis.ALL_SCHEMES))
    p.add_argument("--n", type=int, default=analysis.DEFAULT_POINTS)
    p.add_argument("--out")
    p = sub.add_parser("order-check", help="measured convergence order of a scheme")
    p.add_argument("--scheme", required=True)
    p.add_argument("--function", choices=sorted(analysis.TEST_FUNCTIONS), default="sin")
    p.add_argument("--deltas", help="comma-separated spacings")
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--coef-delta", type=float, default=1e-2)
    p = sub.add_parser("eval", help="MSE of a checkpoint against a ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--truth", help="ground-truth CSV (default: the exact solution)")
    p.add_argument("--out")
    return ap


def resolve_config(name: str) -> str:
    p = Path(name)
    if p.exists():
        return name
    shipped = CONFIG_DIR / (name if name.endswith(".json") else name + ".json")
    return str(shipped) if shipped.exists() else name


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("train", "inverse"):
        args.config = resolve_config(args.config)
        return cmd_train(args, inverse=args.command == "inverse")
    return {"analyze": cmd_analyze, "order-check": cmd_order_check, "eval": cmd_eval}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
