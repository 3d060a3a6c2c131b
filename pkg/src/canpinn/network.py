"""Sinusoidal-feature MLPs evaluated as second-order jets.

Topology strings follow the form used in experiment tables::

    (x)-64-20-20-20-(u)
    (x,y)-64-20-20-20-[20-20-20-(u), 20-20-20-(v), 20-20-20-(p)]

The first trunk layer is the sinusoidal feature map ``sin(2*pi*(W v + b))``;
every later hidden layer uses a plain ``sin`` activation and each head ends
with a linear output unit. Inputs enter unscaled unless ``input_bounds`` is
set, in which case they are first mapped affinely onto the unit box.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .diff_engine import Jet2, Node, ParamStore, Tape, const, jaffine, jet_getitem, jscale, jsin, seed

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Head:
    name: str
    widths: tuple[int, ...] = ()


@dataclass(frozen=True)
class NetworkConfig:
    """Trunk widths plus one branch per output head.

    ``trunk[0]`` is the width of the sinusoidal feature layer when
    ``sinusoidal_first`` is set.
    """

    inputs: tuple[str, ...]
    trunk: tuple[int, ...]
    heads: tuple[Head, ...]
    sinusoidal_first: bool = True
    sigma: float = 1.0
    seed: int = 0
    input_bounds: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("at least one input is required")
        if not self.trunk:
            raise ValueError("at least one hidden layer is required")
        widths = list(self.trunk) + [w for h in self.heads for w in h.widths]
        if any(int(w) < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")
        names = [h.name for h in self.heads]
        if not names:
            raise ValueError("at least one output head is required")
        if len(set(names)) != len(names):
            raise ValueError(f"head names must be unique: {names}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.input_bounds is not None:
            lo, hi = (tuple(float(v) for v in b) for b in self.input_bounds)
            if len(lo) != self.dim or len(hi) != self.dim or any(h <= l for l, h in zip(lo, hi)):
                raise ValueError("input_bounds must give a lower and upper bound per input")
            object.__setattr__(self, "input_bounds", (lo, hi))

    @property
    def dim(self) -> int:
        return len(self.inputs)

    @property
    def head_names(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.heads)

    @classmethod
    def parse(cls, topology: str, **kw) -> "NetworkConfig":
        return parse_topology(topology, **kw)

    @property
    def topology(self) -> str:
        return format_topology(self)

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in storage order."""
        shapes: dict[str, tuple[int, ...]] = {}
        fan_in = self.dim
        for i, w in enumerate(self.trunk):
            shapes[f"trunk.{i}.W"] = (fan_in, w)
            shapes[f"trunk.{i}.b"] = (w,)
            fan_in = w
        trunk_out = fan_in
        for head in self.heads:
            fan_in = trunk_out
            for i, w in enumerate(head.widths):
                shapes[f"head.{head.name}.{i}.W"] = (fan_in, w)
                shapes[f"head.{head.name}.{i}.b"] = (w,)
                fan_in = w
            shapes[f"head.{head.name}.out.W"] = (fan_in, 1)
            shapes[f"head.{head.name}.out.b"] = (1,)
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.layer_shapes().values())

    def to_dict(self) -> dict:
        d = {
            "topology": self.topology,
            "sinusoidal_first": self.sinusoidal_first,
            "sigma": self.sigma,
            "seed": self.seed,
        }
        if self.input_bounds is not None:
            d["input_bounds"] = [list(b) for b in self.input_bounds]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        return parse_topology(
            d["topology"],
            sinusoidal_first=d.get("sinusoidal_first", True),
            sigma=d.get("sigma", 1.0),
            seed=d.get("seed", 0),
            input_bounds=d.get("input_bounds"),
        )


_TOPO = re.compile(r"^\((?P<inputs>[^)]*)\)-(?P<rest>.+)$")


def _parse_chain(text: str) -> tuple[list[int], str | None]:
    """Split '20-20-(u)' into ([20, 20], 'u'); a dangling '[...]' is returned raw."""
    parts = text.split("-")
    widths = []
    for i, part in enumerate(parts):
        part = part.strip()
        if part.startswith("(") and part.endswith(")"):
            if i != len(parts) - 1:
                raise ValueError(f"output must be last in {text!r}")
            return widths, part[1:-1].strip()
        if part.startswith("["):
            return widths, "-".join(parts[i:])
        widths.append(int(part))
    raise ValueError(f"missing output in {text!r}")


def parse_topology(topology: str, **kw) -> NetworkConfig:
    m = _TOPO.match(topology.strip())
    if not m:
        raise ValueError(f"cannot parse topology {topology!r}")
    inputs = tuple(s.strip() for s in m.group("inputs").split(","))
    trunk, tail = _parse_chain(m.group("rest"))
    if tail is None:
        raise ValueError(f"missing outputs in {topology!r}")
    if tail.startswith("["):
        if not tail.endswith("]"):
            raise ValueError(f"unbalanced branch list in {topology!r}")
        heads = []
        for branch in tail[1:-1].split(","):
            widths, name = _parse_chain(branch.strip())
            heads.append(Head(name, tuple(widths)))
    else:
        heads = [Head(tail, ())]
    return NetworkConfig(inputs, tuple(trunk), tuple(heads), **kw)


def format_topology(cfg: NetworkConfig) -> str:
    trunk = "-".join(str(w) for w in cfg.trunk)
    head_strs = ["-".join([str(w) for w in h.widths] + [f"({h.name})"]) for h in cfg.heads]
    if len(cfg.heads) == 1 and not cfg.heads[0].widths:
        tail = head_strs[0]
    else:
        tail = "[" + ", ".join(head_strs) + "]"
    return f"({','.join(cfg.inputs)})-{trunk}-{tail}"


def init_params(config: NetworkConfig, seed: int | None = None) -> ParamStore:
    """Normal(0, sigma^2) feature weights, He-uniform elsewhere, zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    arrays = {}
    for name, shape in config.layer_shapes().items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        elif name == "trunk.0.W" and config.sinusoidal_first:
            arrays[name] = rng.normal(0.0, config.sigma, size=shape)
        else:
            limit = np.sqrt(6.0 / shape[0])
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return ParamStore.from_arrays(arrays)


def _layer(h: Jet2, params: Mapping[str, Node], prefix: str) -> Jet2:
    return jaffine(h, params[f"{prefix}.W"], params[f"{prefix}.b"])


def forward(
    config: NetworkConfig,
    params: Mapping[str, Node] | ParamStore,
    points,
    heads: tuple[str, ...] | None = None,
    axes: tuple[int, ...] | None = None,
    second: bool = True,
) -> dict[str, Jet2]:
    """Jets of every requested head at ``points`` (shape (N, d) or (d,)).

    ``axes`` and ``second`` limit the derivatives carried (default: all).
    """
    if isinstance(params, ParamStore):
        params = params.nodes()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if points.ndim != 2 or points.shape[1] != config.dim:
        raise ValueError(f"expected points of dimension {config.dim}, got shape {points.shape}")
    h = seed(points, axes, second)
    if config.input_bounds is not None:
        # optional affine map of the inputs onto the unit box
        lo, hi = (np.asarray(b) for b in config.input_bounds)
        h = (h - lo) * (1.0 / (hi - lo))
    for i in range(len(config.trunk)):
        z = _layer(h, params, f"trunk.{i}")
        if i == 0 and config.sinusoidal_first:
            z = jscale(z, TWO_PI)
        h = jsin(z)
    out = {}
    for head in config.heads:
        if heads is not None and head.name not in heads:
            continue
        g = h
        for i in range(len(head.widths)):
            g = jsin(_layer(g, params, f"head.{head.name}.{i}"))
        y = _layer(g, params, f"head.{head.name}.out")
        out[head.name] = jet_getitem(y, (slice(None), 0))
    return out


class NetworkField:
    """A trained or training network exposed as per-head field probes.

    Forward passes are cached by the exact bytes of the evaluation points, so
    stencils that revisit the same shifted point set reuse one evaluation.
    A cached pass also serves any request for a subset of its derivatives.
    """

    def __init__(self, config: NetworkConfig, params: Mapping[str, Node] | ParamStore):
        self.config = config
        self.params = params.nodes() if isinstance(params, ParamStore) else params
        self._cache: dict[bytes, list[dict[str, Jet2]]] = {}

    def request(self, points, axes: Sequence[int] | None = None, second: bool = True) -> dict[str, Jet2]:
        """Head jets at ``points`` carrying at least ``axes`` (and diag2 if ``second``)."""
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[None, :]
        axes = tuple(range(self.config.dim)) if axes is None else tuple(sorted(set(axes)))
        key = points.shape[0].to_bytes(8, "little") + points.tobytes()
        entries = self._cache.setdefault(key, [])
        for hit in entries:
            if next(iter(hit.values())).covers(axes, second):
                return hit
        hit = forward(self.config, self.params, points, axes=axes, second=second)
        entries.append(hit)
        return hit

    def __call__(self, points) -> dict[str, Jet2]:
        return self.request(points)

    def probe(self, head: str) -> "HeadProbe":
        if head not in self.config.head_names:
            raise KeyError(f"network has no head {head!r}; heads are {self.config.head_names}")
        return HeadProbe(self, head)

    def fields(self) -> dict[str, object]:
        return {name: self.probe(name) for name in self.config.head_names}

    def values(self, points) -> dict[str, np.ndarray]:
        return {k: j.value.value for k, j in self.request(points, (), False).items()}


class HeadProbe:
    """One network head as a field probe; ``request`` asks for partial jets."""

    def __init__(self, field: NetworkField, head: str):
        self.field = field
        self.head = head

    def __call__(self, points) -> Jet2:
        return self.field.request(points)[self.head]

    def request(self, points, axes: Sequence[int] = (), second: bool = False) -> Jet2:
        return self.field.request(points, axes, second)[self.head]


def predict(config: NetworkConfig, store: ParamStore, points, batch: int = 20000) -> dict[str, np.ndarray]:
    """Plain field values at many points, evaluated in untracked chunks."""
    points = np.asarray(points, dtype=np.float64)
    parts: dict[str, list[np.ndarray]] = {h: [] for h in config.head_names}
    params = store.nodes()
    for start in range(0, points.shape[0], batch):
        jets = forward(config, params, points[start : start + batch], axes=(), second=False)
        for k, j in jets.items():
            parts[k].append(j.value.value)
    return {k: np.concatenate(v) if v else np.zeros(0) for k, v in parts.items()}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, config: NetworkConfig, store: ParamStore, extra: Mapping | None = None) -> Path:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (float64 LE data)."""
    path = Path(path)
    header = {
        "format": "canpinn-checkpoint-1",
        "network": config.to_dict(),
        "n_params": len(store),
        "dtype": "<f8",
        "slices": {k: {"offset": o, "shape": list(s)} for k, (o, s) in store.slices.items()},
        "data_file": path.name + ".bin",
        "extra": dict(extra or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    store.data.astype("<f8").tofile(path.with_name(path.name + ".bin"))
    path.with_name(path.name + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[NetworkConfig, ParamStore, dict]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    header = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.fromfile(path.with_name(header["data_file"]), dtype="<f8")
    if data.size != header["n_params"]:
        raise ValueError(f"checkpoint holds {data.size} values, header says {header['n_params']}")
    slices = {k: (v["offset"], tuple(v["shape"])) for k, v in header["slices"].items()}
    config = NetworkConfig.from_dict(header["network"])
    return config, ParamStore(data.astype(np.float64), slices), header.get("extra", {})


def tracked_field(config: NetworkConfig, store: ParamStore) -> tuple[Tape, NetworkField, dict[str, Node]]:
    """Fresh tape, parameter leaves, and a field over them."""
    tape = Tape()
    nodes = store.nodes(tape)
    return tape, NetworkField(config, nodes), nodes

