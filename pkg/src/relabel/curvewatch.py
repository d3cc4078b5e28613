"""Early-learning transition detection on a per-epoch training curve.

A saturating curve ``f(t) = a * (1 - exp(-b * t**c))`` is fitted to the
series; label correction should start once the fitted slope has dropped by
more than ``threshold`` (relative to the slope at the first epoch).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import NonIncreasingFitError

A_MAX = 1.5
B_STARTS = (0.1, 0.5, 1.0, 2.0)
C_STARTS = (0.5, 1.0, 1.5)
DEGENERATE_B = 1e3

# search bounds in (a, log b, log c)
_BOUNDS = [(1e-9, A_MAX), (math.log(1e-6), math.log(1e3)), (math.log(1e-2), math.log(10.0))]


@dataclass(frozen=True)
class CurveSeries:
    epochs: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.epochs) != len(self.values):
            raise ValueError("epochs and values differ in length")
        if any(e < 1 for e in self.epochs):
            raise ValueError("epochs start at 1")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("epochs must be strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("values must be finite")

    @classmethod
    def from_points(cls, points: Iterable[tuple[int, float]]) -> "CurveSeries":
        pts = list(points)
        return cls(tuple(int(e) for e, _ in pts), tuple(float(v) for _, v in pts))

    def append(self, epoch: int, value: float) -> "CurveSeries":
        return CurveSeries(self.epochs + (int(epoch),), self.values + (float(value),))

    def head(self, n: int) -> "CurveSeries":
        return CurveSeries(self.epochs[:n], self.values[:n])

    def __len__(self) -> int:
        return len(self.epochs)


@dataclass(frozen=True)
class CurveFit:
    a: float
    b: float
    c: float
    residual: float
    t0: float
    degenerate: bool = False

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.a * -np.expm1(-self.b * t**self.c)

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.a * self.b * self.c * t ** (self.c - 1) * np.exp(-self.b * t**self.c)


def _sse(params: np.ndarray, t: np.ndarray, y: np.ndarray) -> float:
    a, log_b, log_c = params
    pred = a * -np.expm1(-math.exp(log_b) * t ** math.exp(log_c))
    r = pred - y
    return float(r @ r)


def _nelder_mead(x0: np.ndarray, t: np.ndarray, y: np.ndarray, xatol: float, fatol: float):
    return minimize(
        _sse,
        x0,
        args=(t, y),
        method="Nelder-Mead",
        bounds=_BOUNDS,
        options={"xatol": xatol, "fatol": fatol, "maxiter": 20000, "maxfev": 40000},
    )


def fit_curve(series: CurveSeries) -> CurveFit:
    """Least-squares fit of ``a * (1 - exp(-b * t**c))``.

    Nelder-Mead is started from every point of the grid
    ``a = max(values)``, ``b in B_STARTS``, ``c in C_STARTS``; the lowest
    residual wins (first start on ties) and is then polished, so the
    result is deterministic.
    A constant series is returned as a flagged degenerate fit.
    """
    if len(series) < 3:
        raise ValueError("at least 3 points are needed to fit the curve")
    t = np.asarray(series.epochs, dtype=np.float64)
    y = np.asarray(series.values, dtype=np.float64)
    t0 = float(t[0])
    if np.all(y == y[0]):
        return CurveFit(float(y[0]), DEGENERATE_B, 1.0, 0.0, t0, degenerate=True)

    a0 = min(max(float(y.max()), 1e-6), A_MAX)
    best: tuple[float, np.ndarray] | None = None
    for b0, c0 in itertools.product(B_STARTS, C_STARTS):
        x0 = np.array([a0, math.log(b0), math.log(c0)])
        res = _nelder_mead(x0, t, y, xatol=1e-8, fatol=1e-14)
        if best is None or res.fun < best[0]:
            best = (float(res.fun), res.x)
    # polish the winner from a fresh simplex to escape simplex collapse
    for _ in range(2):
        res = _nelder_mead(best[1], t, y, xatol=1e-12, fatol=1e-18)
        if res.fun <= best[0]:
            best = (float(res.fun), res.x)
    sse, (a, log_b, log_c) = best
    return CurveFit(float(a), math.exp(log_b), math.exp(log_c), sse, t0)


def relative_derivative_change(fit: CurveFit, t: float) -> float:
    """``(f'(t0) - f'(t)) / f'(t0)`` with ``t0`` the first fitted epoch."""
    if t < fit.t0:
        raise ValueError(f"t={t} precedes the first epoch {fit.t0}")
    d0 = float(fit.derivative(fit.t0))
    if not d0 > 0:
        raise NonIncreasingFitError(f"fitted slope at t0={fit.t0} is {d0}, not positive")
    return (d0 - float(fit.derivative(t))) / d0


def transition_reached(series: CurveSeries, threshold: float = 0.9) -> bool:
    """Whether the latest epoch of ``series`` is past the transition."""
    if len(series) < 3:
        return False
    fit = fit_curve(series)
    if fit.degenerate:
        return False
    return relative_derivative_change(fit, series.epochs[-1]) > threshold


def detect_transition(series: CurveSeries, threshold: float = 0.9) -> int | None:
    """First epoch at which the online refit crosses ``threshold``.

    The curve is refitted on every prefix (as it would be during
    training) and the prefix's last epoch is tested.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    for n in range(3, len(series) + 1):
        if transition_reached(series.head(n), threshold):
            return series.epochs[n - 1]
    return None


def read_series(rows: Sequence[Sequence[str]]) -> CurveSeries:
    """Parse ``(epoch, value)`` rows, skipping a non-numeric header row."""
    pts = []
    for i, row in enumerate(rows):
        if not row:
            continue
        try:
            pts.append((int(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if i == 0:
                continue
            raise
    return CurveSeries.from_points(pts)
