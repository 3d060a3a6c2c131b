"""Fourier analysis of the first-derivative schemes.

Substituting a single mode ``phi = exp(i*alpha*x)`` into a difference
operator with spacing ``h`` gives ``i * alpha' * h`` where ``alpha'`` is the
effective wavenumber. Writing ``theta = alpha * h``:

* ``k_i = Re(alpha' h)`` measures dispersion (exact scheme: ``k_i = theta``),
* ``k_r = Im(alpha' h)`` measures dissipation (negative means damping).

AD differentiates the mode exactly, so it has no curve of its own; the
identity ``k_i = theta, k_r = 0`` serves as its reference line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schemes import SchemeKind, SchemeError

DEFAULT_POINTS = 512
ALL_SCHEMES = ("uw1", "uw2", "cd2", "can-uw2", "can-cd")


def effective_wavenumber(kind, ah) -> complex | np.ndarray:
    """alpha' h for one scheme at normalised wavenumber(s) ``ah`` in (0, pi]."""
    kind = SchemeKind.parse(kind)
    theta = np.asarray(ah, dtype=np.float64)
    if np.any(theta <= 0) or np.any(theta > np.pi * (1 + 1e-15)):
        raise ValueError("ah must lie in (0, pi]")
    e_m = np.exp(-1j * theta)
    e_p = np.exp(1j * theta)
    if kind is SchemeKind.ND_UW1:
        sym = 1 - e_m
    elif kind is SchemeKind.ND_UW2:
        sym = (3 - 4 * e_m + e_m * e_m) / 2
    elif kind is SchemeKind.ND_CD2:
        sym = (e_p - e_m) / 2
    elif kind is SchemeKind.CAN_UW2:
        sym = (1 - e_m) + (1j * theta / 2) * (1 - e_m)
    elif kind is SchemeKind.CAN_CD:
        sym = (e_p - e_m) / 2 - (1j * theta / 8) * (e_p - 2 + e_m)
    else:
        raise SchemeError("AD is spectrally exact; use the identity reference line")
    out = -1j * sym
    return complex(out) if out.ndim == 0 else out


def wavenumber_grid(n_points: int = DEFAULT_POINTS) -> np.ndarray:
    """Uniform grid on (0, pi] that excludes zero and ends exactly at pi."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    return np.pi * np.arange(1, n_points + 1) / n_points


@dataclass
class DispersionCurve:
    ah: np.ndarray
    k_i: dict[str, np.ndarray]
    k_r: dict[str, np.ndarray]

    @property
    def schemes(self) -> list[str]:
        return list(self.k_i)

    def dispersion_error(self, scheme: str) -> np.ndarray:
        """ah - k_i, the quantity usually plotted for dispersion."""
        return self.ah - self.k_i[scheme]

    def columns(self) -> list[str]:
        cols = ["ah"]
        for s in self.schemes:
            cols += [f"k_i.{s}", f"k_r.{s}"]
        return cols

    def rows(self) -> Iterable[list[float]]:
        for j, a in enumerate(self.ah):
            row = [a]
            for s in self.schemes:
                row += [self.k_i[s][j], self.k_r[s][j]]
            yield row

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([fmt(v) for v in row])
        return path


def fmt(v: float) -> str:
    """Fixed 17-significant-digit formatting for reproducible text output."""
    return f"{float(v):.17g}"


def dispersion_curve(kinds: Sequence = ALL_SCHEMES, n_points: int = DEFAULT_POINTS) -> DispersionCurve:
    """k_i and k_r of each scheme on a uniform (0, pi] grid."""
    ah = wavenumber_grid(n_points)
    k_i, k_r = {}, {}
    for kind in kinds:
        kind = SchemeKind.parse(kind)
        w = np.asarray(effective_wavenumber(kind, ah))
        k_i[kind.token] = w.real.copy()
        k_r[kind.token] = w.imag.copy()
    return DispersionCurve(ah, k_i, k_r)


def small_wavenumber_ratios(kind, ah: float = 1e-2) -> tuple[float, float]:
    """((ah - k_i) / ah^3, k_r / ah^4): leading dispersion and dissipation coefficients."""
    w = effective_wavenumber(kind, ah)
    return (ah - w.real) / ah**3, w.imag / ah**4


# ---------------------------------------------------------------------------
# measured convergence order
# ---------------------------------------------------------------------------

# error of (scheme - exact) first derivative as sum_k coeff_k * delta^k * u^(k+1)
TRUNCATION = {
    "uw1": {1: -1.0 / 2.0, 2: 1.0 / 6.0},
    "uw2": {1: 0.0, 2: -1.0 / 3.0},
    "cd2": {1: 0.0, 2: 1.0 / 6.0},
    "can-uw2": {1: 0.0, 2: -1.0 / 12.0},
    "can-cd": {1: 0.0, 2: 1.0 / 24.0},
}
NOMINAL_ORDER = {"uw1": 1, "uw2": 2, "cd2": 2, "can-uw2": 2, "can-cd": 2}

TEST_FUNCTIONS = {
    # derivatives of order 0..3
    "sin": lambda x: (np.sin(x), np.cos(x), -np.sin(x), -np.cos(x)),
    "cubic": lambda x: (x**3, 3 * x**2, 6 * x, 6.0 + 0 * x),
}


@dataclass
class OrderReport:
    scheme: str
    function: str
    deltas: np.ndarray
    errors: np.ndarray
    slope: float
    coef_ratio: float
    expected_coef: float
    remainder: float | None
    passed: bool
    failures: list[str]

    def table(self) -> str:
        lines = [f"{'delta':>12} {'error':>24}"]
        lines += [f"{fmt(d):>12} {fmt(e):>24}" for d, e in zip(self.deltas, self.errors)]
        lines.append(f"slope {self.slope:.4f} (nominal {NOMINAL_ORDER[self.scheme]})")
        lines.append(f"leading coefficient {self.coef_ratio:.6g} (expected {self.expected_coef:.6g})")
        if self.remainder is not None:
            lines.append(f"max remainder beyond finite Taylor series {self.remainder:.3e}")
        lines.append("PASS" if self.passed else "FAIL: " + "; ".join(self.failures))
        return "\n".join(lines)


def scheme_error(kind, function: str, x0: float, delta: float) -> float:
    """Signed error of the scheme's first derivative of ``function`` at ``x0``."""
    from .schemes import analytic_probe, first_derivative

    f = TEST_FUNCTIONS[function]

    def closed(p):
        v, d1, d2, _ = f(p[:, 0])
        return v, d1[None, :], d2[None, :]

    d = first_derivative(kind, analytic_probe(closed), np.array([[x0]]), 0, delta, wind=1)
    return float(d.value[0] - f(np.array([x0]))[1][0])


def order_check(
    kind,
    function: str = "sin",
    deltas=(0.2, 0.1, 0.05, 0.025),
    x0: float = 1.0,
    coef_delta: float = 1e-2,
    slope_tol: float = 0.1,
    coef_tol: float = 0.02,
    remainder_tol: float = 1e-12,
) -> OrderReport:
    """Log-log slope and leading error coefficient of a first-derivative scheme.

    For the cubic the truncation series is finite, so the measured error must
    match it to ``remainder_tol``; for sin the slope and the coefficient at
    ``coef_delta`` are checked.
    """
    token = SchemeKind.parse(kind).token
    if token not in TRUNCATION:
        raise SchemeError(f"no truncation model for {token!r}")
    if function not in TEST_FUNCTIONS:
        raise ValueError(f"function must be one of {sorted(TEST_FUNCTIONS)}")
    deltas = np.asarray(deltas, dtype=np.float64)
    errors = np.array([scheme_error(token, function, x0, d) for d in deltas])
    with np.errstate(divide="ignore"):
        slope = float(np.polyfit(np.log(deltas), np.log(np.abs(errors)), 1)[0])
    p = NOMINAL_ORDER[token]
    derivs = TEST_FUNCTIONS[function](np.array([x0]))
    expected = TRUNCATION[token][p]
    coef = scheme_error(token, function, x0, coef_delta) / (coef_delta**p * derivs[p + 1][0])
    failures = []
    remainder = None
    if function == "cubic":
        model = np.array([sum(c * d**k * derivs[k + 1][0] for k, c in TRUNCATION[token].items()) for d in deltas])
        remainder = float(np.max(np.abs(errors - model)))
        if not remainder < remainder_tol:
            failures.append(f"remainder {remainder:.3e} >= {remainder_tol:g}")
    else:
        if abs(slope - p) > slope_tol:
            failures.append(f"slope {slope:.4f} outside {p}+-{slope_tol}")
        if abs(coef - expected) > coef_tol * abs(expected):
            failures.append(f"coefficient {coef:.6g} not within {coef_tol:.0%} of {expected:.6g}")
    return OrderReport(token, function, deltas, errors, slope, coef, expected, remainder, not failures, failures)
