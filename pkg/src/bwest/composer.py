"""End-to-end composition of per-link service curves and rate post-processing."""
from __future__ import annotations

import math
from functools import reduce
from typing import Sequence

import numpy as np

from .minplus import (RATE_SCALE, Curve, CurveError, DEFAULT_GRID, GridConfig, Mode,
                      convolve, legendre, legendre_back, _hull_points)


def _slope_rates(curves: Sequence[Curve]) -> np.ndarray:
    """Rates at which the conjugates of convex curves have kinks (their slopes), plus 0."""
    rates = [0.0]
    for c in curves:
        hx, hy, tail = _hull_points(c)
        if hx.size > 1:
            rates.extend((np.diff(hy) / np.diff(hx) / RATE_SCALE).tolist())
        if math.isfinite(tail):
            rates.append(tail / RATE_SCALE)
    return np.unique(np.asarray(rates))


def compose(curves: Sequence[Curve], grid: GridConfig = DEFAULT_GRID,
            horizon: float | None = None, fast: bool = True) -> Curve:
    """Service curve of a tandem: S_1 * S_2 * ... * S_N.

    All-convex LINEAR inputs are added in the Legendre domain and inverted,
    which is exact because the conjugates are piecewise linear with kinks
    only at the input slopes.  Anything else is convolved pairwise.
    """
    if not curves:
        raise CurveError("need at least one curve")
    if len(curves) == 1:
        return curves[0]
    convex = all(c.mode is Mode.LINEAR and c.is_convex() for c in curves)
    if fast and convex and all(math.isfinite(c.tail) for c in curves):
        rates = _slope_rates(curves)
        cap = min(c.final_rate for c in curves)
        rates = rates[rates <= cap + 1e-9]
        total = reduce(lambda a, b: a + b, (legendre(c, rates) for c in curves))
        return legendre_back(total)
    return reduce(lambda f, g: convolve(f, g, grid, horizon), curves)


def min_rate_compose(rates: Sequence[float]) -> tuple[float, int]:
    """Smallest rate and its index (the tight link); ties go to the lowest index."""
    if len(rates) == 0:
        raise ValueError("need at least one rate")
    i = int(np.argmin(np.asarray(rates, dtype=float)))
    return float(rates[i]), i


def derivative(c: Curve, grid: GridConfig = DEFAULT_GRID, horizon: float | None = None,
               smooth: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference slope in Mbps at each grid step of [0, horizon).

    ``smooth`` > 1 applies a centered moving average of that many samples
    (edges use the available neighbours).
    """
    if c.mode is Mode.STEP:
        raise CurveError("derivative of a staircase is not defined; use a LINEAR curve")
    T = grid.times(horizon)
    V = np.asarray(c(T), dtype=float)
    if np.isinf(V).any():
        raise CurveError("curve is infinite inside the horizon")
    rate = np.diff(V) / (grid.dt * RATE_SCALE)
    if smooth and smooth > 1:
        k = np.ones(smooth)
        num = np.convolve(rate, k, mode="same")
        den = np.convolve(np.ones_like(rate), k, mode="same")
        rate = num / den
    return T[:-1], rate


def write_derivative(path, t: np.ndarray, rate: np.ndarray) -> None:
    from .io import write_rows

    write_rows(path, ["t_ms", "rate_mbps"], zip(t, rate))
