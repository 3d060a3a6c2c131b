"""Face reconstructions and derivative approximations.

All operators act on a *field probe*: any callable mapping an ``(N, d)``
array of points to a :class:`~canpinn.diff_engine.Jet2`. Networks and
analytic test functions are therefore interchangeable, and every result is a
node that stays differentiable with respect to the network parameters.

Stencil points are addressed as ``x + k * delta * e_axis`` with ``k`` a
multiple of one half, always computed from the same base array. The east
face of ``x`` sits at ``k = +1/2`` and the west face is the east face of the
point ``k = -1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .diff_engine import Jet2, Node, scale, where

FieldProbe = Callable[[np.ndarray], Jet2]


class SchemeKind(enum.Enum):
    AD = "ad"
    ND_UW1 = "uw1"
    ND_UW2 = "uw2"
    ND_CD2 = "cd2"
    CAN_UW2 = "can-uw2"
    CAN_CD = "can-cd"

    @classmethod
    def parse(cls, token: "str | SchemeKind") -> "SchemeKind":
        if isinstance(token, SchemeKind):
            return token
        try:
            return cls(str(token).strip().lower())
        except ValueError:
            valid = "|".join(k.value for k in cls)
            raise ValueError(f"unknown scheme {token!r}; expected {valid}") from None

    @property
    def token(self) -> str:
        return self.value

    @property
    def upwind(self) -> bool:
        return self in (SchemeKind.ND_UW1, SchemeKind.ND_UW2, SchemeKind.CAN_UW2)

    @property
    def compact(self) -> bool:
        return self in (SchemeKind.CAN_UW2, SchemeKind.CAN_CD)


NUMERICAL_KINDS = tuple(k for k in SchemeKind if k is not SchemeKind.AD)


class SchemeError(ValueError):
    """A scheme was asked for an operation it does not define."""


@dataclass(frozen=True)
class SchemeConfig:
    """Per-term scheme assignment and stencil spacing along each spatial axis.

    ``convection`` also covers plain first derivatives (the ODE). Time
    derivatives always come from AD.
    """

    delta: tuple[float, ...]
    convection: SchemeKind = SchemeKind.CAN_UW2
    pressure: SchemeKind = SchemeKind.CAN_CD
    diffusion: SchemeKind = SchemeKind.ND_CD2
    continuity: SchemeKind = SchemeKind.ND_CD2
    temporal: str = "ad"

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        for name in ("convection", "pressure", "diffusion", "continuity"):
            object.__setattr__(self, name, SchemeKind.parse(getattr(self, name)))
        if any(not d > 0 for d in self.delta):
            raise ValueError(f"stencil spacings must be positive: {self.delta}")
        if self.diffusion not in (SchemeKind.AD, SchemeKind.ND_CD2):
            raise ValueError("diffusion scheme must be ad or cd2")
        if self.temporal != "ad":
            raise ValueError("temporal derivatives are always computed by AD")

    @classmethod
    def a_pinn(cls, delta: Sequence[float]) -> "SchemeConfig":
        ad = SchemeKind.AD
        return cls(tuple(delta), ad, ad, ad, ad)

    @classmethod
    def n_pinn(cls, delta: Sequence[float], convection="uw2") -> "SchemeConfig":
        return cls(tuple(delta), SchemeKind.parse(convection), SchemeKind.ND_CD2, SchemeKind.ND_CD2, SchemeKind.ND_CD2)

    @classmethod
    def can_pinn(cls, delta: Sequence[float], pressure="can-cd", convection="can-uw2") -> "SchemeConfig":
        return cls(tuple(delta), SchemeKind.parse(convection), SchemeKind.parse(pressure), SchemeKind.ND_CD2, SchemeKind.ND_CD2)

    def spacing(self, axis: int) -> float:
        return self.delta[axis]

    def with_convection(self, kind) -> "SchemeConfig":
        return replace(self, convection=SchemeKind.parse(kind))

    def to_dict(self) -> dict:
        return {
            "delta": list(self.delta),
            "convection": self.convection.token,
            "pressure": self.pressure.token,
            "diffusion": self.diffusion.token,
            "continuity": self.continuity.token,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SchemeConfig":
        return cls(
            tuple(d["delta"]),
            d.get("convection", "can-uw2"),
            d.get("pressure", "can-cd"),
            d.get("diffusion", "cd2"),
            d.get("continuity", "cd2"),
        )


def _shifted(x: np.ndarray, axis: int, k: float, delta: float) -> np.ndarray:
    if k == 0:
        return x
    pts = np.array(x, dtype=np.float64, copy=True)
    pts[:, axis] = x[:, axis] + k * delta
    return pts


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _wind_array(wind, n: int) -> np.ndarray:
    w = np.broadcast_to(np.asarray(wind, dtype=np.float64), (n,))
    if np.any((w != 1.0) & (w != -1.0)):
        raise ValueError("wind sign must be +1 or -1")
    return w


def ask(probe: FieldProbe, x, axes: Sequence[int] = (), second: bool = False) -> Jet2:
    """Jet of ``probe`` at ``x`` carrying at least ``axes``.

    Probes with a ``request`` method compute only those derivatives; plain
    callables return their full jet.
    """
    request = getattr(probe, "request", None)
    return request(x, tuple(axes), second) if request is not None else probe(x)


def _east_face(kind: SchemeKind, probe: FieldProbe, x, axis, delta, base: float, sign: float) -> Node:
    """Reconstruction at x + (base + 1/2) * delta for a single wind sign."""
    # compact stencils read the slope wherever they read the value
    need = (axis,) if kind.compact else ()

    def u(k):
        return ask(probe, _shifted(x, axis, base + k, delta), need).value

    def ux(k):
        return ask(probe, _shifted(x, axis, base + k, delta), need).d(axis)

    if kind is SchemeKind.ND_CD2:
        return scale(u(1) + u(0), 0.5)
    if kind is SchemeKind.CAN_CD:
        return scale(u(1) + u(0), 0.5) - scale(ux(1) - ux(0), delta / 8.0)
    # upwind stencils: wind -1 mirrors the stencil about the face
    up, far = (0, -1) if sign > 0 else (1, 2)
    if kind is SchemeKind.ND_UW1:
        return u(up)
    if kind is SchemeKind.ND_UW2:
        return scale(u(up), 1.5) - scale(u(far), 0.5)
    if kind is SchemeKind.CAN_UW2:
        return u(up) + scale(ux(up), sign * delta / 2.0)
    raise SchemeError(f"face values are undefined for scheme {kind.token!r}")


def _face(kind, probe, x, axis, delta, base, wind) -> Node:
    if kind is SchemeKind.AD:
        raise SchemeError("face values are undefined for pure AD")
    if not kind.upwind:
        return _east_face(kind, probe, x, axis, delta, base, 1.0)
    if np.ndim(wind) == 0:
        w = float(wind)
        if w not in (1.0, -1.0):
            raise ValueError("wind sign must be +1 or -1")
        return _east_face(kind, probe, x, axis, delta, base, w)
    w = _wind_array(wind, x.shape[0])
    if np.all(w > 0):
        return _east_face(kind, probe, x, axis, delta, base, 1.0)
    if np.all(w < 0):
        return _east_face(kind, probe, x, axis, delta, base, -1.0)
    plus = _east_face(kind, probe, x, axis, delta, base, 1.0)
    minus = _east_face(kind, probe, x, axis, delta, base, -1.0)
    return where(w > 0, plus, minus)


def face_value(
    kind,
    probe: FieldProbe,
    x,
    axis: int = 0,
    delta: float = 0.1,
    side: str = "east",
    wind=1,
) -> Node:
    """Field reconstruction at the east (x + delta/2) or west (x - delta/2) face."""
    kind = SchemeKind.parse(kind)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if side not in ("east", "west"):
        raise ValueError("side must be 'east' or 'west'")
    x = _points(x)
    return _face(kind, probe, x, axis, delta, 0.0 if side == "east" else -1.0, wind)


def first_derivative(kind, probe: FieldProbe, x, axis: int = 0, delta: float = 0.1, wind=1) -> Node:
    """d/dx_axis by AD or as (face_e - face_w) / delta."""
    kind = SchemeKind.parse(kind)
    x = _points(x)
    if kind is SchemeKind.AD:
        return ask(probe, x, (axis,)).d(axis)
    if not delta > 0:
        raise ValueError("delta must be positive")
    east = _face(kind, probe, x, axis, delta, 0.0, wind)
    west = _face(kind, probe, x, axis, delta, -1.0, wind)
    return scale(east - west, 1.0 / delta)


def second_derivative(kind, probe: FieldProbe, x, axis: int = 0, delta: float = 0.1) -> Node:
    """d2/dx_axis^2 by AD or by the three-point central stencil."""
    kind = SchemeKind.parse(kind)
    x = _points(x)
    if kind is SchemeKind.AD:
        return ask(probe, x, (axis,), True).d2(axis)
    if kind is not SchemeKind.ND_CD2:
        raise SchemeError(f"second derivatives support only ad and cd2, not {kind.token!r}")
    if not delta > 0:
        raise ValueError("delta must be positive")
    up = ask(probe, _shifted(x, axis, 1, delta)).value
    mid = ask(probe, x).value
    down = ask(probe, _shifted(x, axis, -1, delta)).value
    return scale(up - scale(mid, 2.0) + down, 1.0 / (delta * delta))


def wind_of(advecting_face: Node | np.ndarray) -> np.ndarray:
    """Upwind direction from a face velocity; zero counts as positive."""
    v = advecting_face.value if isinstance(advecting_face, Node) else np.asarray(advecting_face)
    return np.where(v >= 0, 1.0, -1.0)


def flux_derivative(
    kind,
    advecting: FieldProbe,
    advected: FieldProbe,
    x,
    axis: int = 0,
    delta: float = 0.1,
) -> Node:
    """Conservative difference (a_e u_e - a_w u_w) / delta.

    The advecting velocity is probed directly at the two faces; the advected
    field is reconstructed by ``kind`` with the wind taken from that velocity.
    """
    kind = SchemeKind.parse(kind)
    if kind is SchemeKind.AD:
        raise SchemeError("flux differences are undefined for pure AD; use the product rule")
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = _points(x)
    a_e = ask(advecting, _shifted(x, axis, 0.5, delta)).value
    a_w = ask(advecting, _shifted(x, axis, -0.5, delta)).value
    u_e = _face(kind, advected, x, axis, delta, 0.0, wind_of(a_e))
    u_w = _face(kind, advected, x, axis, delta, -1.0, wind_of(a_w))
    return scale(a_e * u_e - a_w * u_w, 1.0 / delta)


def ad_flux_derivative(advecting: FieldProbe, advected: FieldProbe, x, axis: int = 0) -> Node:
    """d(a u)/dx_axis by the product rule on AD jets."""
    x = _points(x)
    a = ask(advecting, x, (axis,))
    u = ask(advected, x, (axis,))
    return a.d(axis) * u.value + a.value * u.d(axis)


def convective_flux(kind, advecting, advected, x, axis, delta) -> Node:
    """Dispatch between the conservative stencil and the AD product rule."""
    kind = SchemeKind.parse(kind)
    if kind is SchemeKind.AD:
        return ad_flux_derivative(advecting, advected, x, axis)
    return flux_derivative(kind, advecting, advected, x, axis, delta)


def analytic_probe(fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]) -> FieldProbe:
    """Probe from a closed form returning (value, grad (d, N), diag2 (d, N))."""

    def probe(points):
        v, g, h = fn(np.asarray(points, dtype=np.float64))
        return Jet2(v, g, h)

    return probe


def jet_probe(fn: Callable[[Jet2], Jet2]) -> FieldProbe:
    """Probe from a jet expression of the coordinate jets ``(N, d)``.

    ``fn`` receives a list of per-axis coordinate jets.
    """
    from .diff_engine import coordinate

    def probe(points):
        points = _points(points)
        coords = [coordinate(points, i) for i in range(points.shape[1])]
        return fn(*coords)

    return probe
