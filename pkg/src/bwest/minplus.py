"""Min-plus algebra on cumulative curves.

Units throughout: time in ms, data in Mb, rates in Mbps.  A rate multiplied
by a time therefore carries a factor ``RATE_SCALE = 1e-3``.

Curves are piecewise-linear (or right-continuous staircases) anchored at the
origin.  Operations take an exact path where the algebra allows it (convex
curves, staircases against continuous curves, Legendre transforms of
piecewise-linear functions) and fall back to an O(n^2) scan over a uniform
time grid otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

INF = math.inf
RATE_SCALE = 1e-3  # Mbps * ms -> Mb
EPS_T = 1e-9
EPS_V = 1e-6
SLOPE_TOL = 1e-9


class CurveError(ValueError):
    pass


class NonCausalError(ValueError):
    """Departures exceed arrivals: the input pair cannot come from a causal system."""


class Mode(str, Enum):
    LINEAR = "linear"
    STEP = "step"


class Extension(str, Enum):
    FINAL_SLOPE = "final_slope"
    PLUS_INFINITY = "plus_infinity"
    CLAMP = "clamp"


@dataclass(frozen=True)
class GridConfig:
    dt: float = 0.1
    t_max: float = 500.0
    eps_t: float = EPS_T
    eps_v: float = EPS_V

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max < self.dt:
            raise ValueError("t_max must be at least dt")
        if not (self.eps_t > 0 and self.eps_v > 0):
            raise ValueError("tolerances must be positive")

    def n_steps(self, horizon: float | None = None) -> int:
        h = self.t_max if horizon is None else horizon
        return int(round(h / self.dt))

    def times(self, horizon: float | None = None) -> np.ndarray:
        return np.arange(self.n_steps(horizon) + 1) * self.dt


DEFAULT_GRID = GridConfig()


class Curve:
    """Non-decreasing cumulative function through the origin.

    ``t``/``v`` hold the breakpoints.  Between breakpoints the curve is
    interpolated linearly (``Mode.LINEAR``) or held right-continuously
    (``Mode.STEP``).  Past the last breakpoint the extension applies:
    ``FINAL_SLOPE`` continues at ``final_rate`` (Mbps; defaults to the slope
    of the last segment), ``PLUS_INFINITY`` jumps to +inf and ``CLAMP`` holds
    the last value.  ``domain`` marks how far the curve is backed by
    observations (inf for analytic curves).
    """

    __slots__ = ("t", "v", "mode", "extension", "tail", "domain")

    def __init__(
        self,
        t: Sequence[float],
        v: Sequence[float],
        mode: Mode = Mode.LINEAR,
        extension: Extension = Extension.FINAL_SLOPE,
        final_rate: float | None = None,
        domain: float = INF,
    ):
        t = np.array(t, dtype=float)
        v = np.array(v, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise CurveError("breakpoints must be two equal-length non-empty sequences")
        if t[0] != 0.0 or v[0] != 0.0:
            raise CurveError("curve must pass through the origin")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise CurveError("breakpoints must be finite")
        if np.any(np.diff(t) <= 0):
            raise CurveError("breakpoint times must be strictly increasing")
        if np.any(np.diff(v) < -EPS_V):
            raise CurveError("curve values must be non-decreasing")
        v = np.maximum.accumulate(v)
        mode = Mode(mode)
        extension = Extension(extension)
        if extension is Extension.FINAL_SLOPE:
            if final_rate is not None:
                if final_rate < 0:
                    raise CurveError("final rate must be non-negative")
                tail = final_rate * RATE_SCALE
            elif t.size >= 2:
                tail = (v[-1] - v[-2]) / (t[-1] - t[-2])
            else:
                raise CurveError("FINAL_SLOPE with one breakpoint needs an explicit final_rate")
        elif extension is Extension.CLAMP:
            tail = 0.0
        else:
            tail = INF
        t.flags.writeable = False
        v.flags.writeable = False
        self.t = t
        self.v = v
        self.mode = mode
        self.extension = extension
        self.tail = float(tail)
        self.domain = float(domain)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_samples(cls, t, v, mode: Mode = Mode.LINEAR, domain: float = INF) -> "Curve":
        """Build a curve from grid samples; a trailing run of +inf becomes PLUS_INFINITY."""
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        finite = np.isfinite(v)
        if not finite[0]:
            raise CurveError("curve value at the origin must be finite")
        if finite.all():
            ext = Extension.FINAL_SLOPE if t.size >= 2 else Extension.CLAMP
            return cls(t, v, mode, ext, domain=domain)
        cut = int(np.argmin(finite))
        if finite[cut:].any():
            raise CurveError("+inf values must form a trailing run")
        return cls(t[:cut], v[:cut], mode, Extension.PLUS_INFINITY, domain=domain)

    def replace(self, **kw) -> "Curve":
        args = dict(t=self.t, v=self.v, mode=self.mode, extension=self.extension,
                    final_rate=self.final_rate if self.extension is Extension.FINAL_SLOPE else None,
                    domain=self.domain)
        args.update(kw)
        return Curve(**args)

    # -- evaluation -------------------------------------------------------------

    @property
    def final_rate(self) -> float:
        """Asymptotic rate in Mbps (inf for PLUS_INFINITY)."""
        return self.tail / RATE_SCALE

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.v.tolist()))

    def __repr__(self):
        return (f"Curve(n={self.t.size}, mode={self.mode.value}, "
                f"extension={self.extension.value}, final_rate={self.final_rate:g})")

    def _tail_values(self, x: np.ndarray) -> np.ndarray:
        if self.extension is Extension.PLUS_INFINITY:
            return np.full_like(x, INF)
        return self.v[-1] + self.tail * (x - self.t[-1])

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < -EPS_T):
            raise CurveError("curves are evaluated at t >= 0 only")
        out = np.empty_like(x)
        inside = x <= self.t[-1] + EPS_T
        xi = x[inside]
        if self.mode is Mode.LINEAR:
            out[inside] = np.interp(xi, self.t, self.v)
        else:
            idx = np.searchsorted(self.t, xi + EPS_T, side="right") - 1
            out[inside] = self.v[np.clip(idx, 0, None)]
        out[~inside] = self._tail_values(x[~inside])
        return float(out[0]) if scalar else out

    def left(self, x):
        """Left limit f(x-); equals f(x) at x = 0 and for continuous pieces."""
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.mode is Mode.LINEAR:
            out = np.asarray(self(x), dtype=float).copy()
            if self.extension is Extension.PLUS_INFINITY:
                # the jump to +inf sits just after the last breakpoint
                over = x > self.t[-1] + EPS_T
                out[over] = INF
        else:
            out = np.empty_like(x)
            inside = x <= self.t[-1] + EPS_T
            idx = np.searchsorted(self.t, x[inside] - EPS_T, side="left") - 1
            out[inside] = self.v[np.clip(idx, 0, None)]
            out[~inside] = self._tail_values(x[~inside])
            # a tail that starts at the last breakpoint is continuous from the left
            out[x <= EPS_T] = 0.0
        return float(out[0]) if scalar else out

    # -- shape ------------------------------------------------------------------

    def slopes(self) -> np.ndarray:
        """Segment slopes (Mb/ms) of a LINEAR curve, tail included."""
        seg = np.diff(self.v) / np.diff(self.t) if self.t.size > 1 else np.empty(0)
        return np.append(seg, self.tail)

    def is_convex(self, tol: float = SLOPE_TOL) -> bool:
        """Non-decreasing slopes (tail included); staircases never qualify."""
        if self.mode is not Mode.LINEAR:
            return False
        return bool(np.all(np.diff(self.slopes()) >= -tol))

    def segments(self) -> tuple[list[tuple[float, float]], float]:
        """(length, slope) pieces plus the tail slope."""
        lengths = np.diff(self.t)
        seg = np.diff(self.v) / lengths if lengths.size else np.empty(0)
        return list(zip(lengths.tolist(), seg.tolist())), self.tail


# -- canonical curves -------------------------------------------------------------

def _nonneg(**params):
    for name, val in params.items():
        if val < 0 or not math.isfinite(val):
            raise CurveError(f"{name} must be finite and non-negative, got {val}")


def burst(shift: float = 0.0) -> Curve:
    """Min-plus impulse delayed by ``shift``: 0 on [0, shift], +inf afterwards."""
    _nonneg(shift=shift)
    if shift == 0:
        return Curve([0.0], [0.0], extension=Extension.PLUS_INFINITY)
    return Curve([0.0, shift], [0.0, 0.0], extension=Extension.PLUS_INFINITY)


def constant_rate(rate: float) -> Curve:
    _nonneg(rate=rate)
    return Curve([0.0], [0.0], final_rate=rate)


def rate_latency(rate: float, latency: float) -> Curve:
    _nonneg(rate=rate, latency=latency)
    if latency == 0:
        return constant_rate(rate)
    return Curve([0.0, latency], [0.0, 0.0], final_rate=rate)


def token_bucket(bucket: float, rate: float) -> Curve:
    """b + r t for t > 0 and 0 at t = 0; the jump is a ramp of width EPS_T."""
    _nonneg(bucket=bucket, rate=rate)
    if bucket == 0:
        return constant_rate(rate)
    return Curve([0.0, EPS_T], [0.0, bucket + rate * RATE_SCALE * EPS_T], final_rate=rate)


def quadratic(a: float, grid: GridConfig = DEFAULT_GRID) -> Curve:
    """a t^2 sampled on the grid; ``a`` in kb/ms^2, so the curve value is a*t^2 kb."""
    _nonneg(a=a)
    t = grid.times()
    return Curve(t, a * t * t * RATE_SCALE)


# -- hull helpers -------------------------------------------------------------------

def _lower_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of points sorted by strictly increasing x."""
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or above the chord a -> i
            if (y[b] - y[a]) * (x[i] - x[a]) >= (y[i] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull, dtype=int)


def _hull_points(f: Curve) -> tuple[np.ndarray, np.ndarray, float]:
    """Vertices and tail slope of the convex hull of ``f``.

    For a staircase only the left-limit corners (t_j, v_{j-1}) can touch the
    hull; the tail is then anchored at the lowest point along its slope.
    """
    if f.mode is Mode.LINEAR or f.t.size == 1:
        x, y = f.t, f.v
    else:
        x = f.t
        y = np.concatenate([[0.0], f.v[:-1]])
    tail = f.tail
    if math.isfinite(tail):
        score = y - tail * x
        m = int(np.flatnonzero(score <= score.min() + 1e-15)[-1])
        x, y = x[: m + 1], y[: m + 1]
    idx = _lower_hull(x, y)
    return x[idx], y[idx], tail


def convex_hull(f: Curve) -> Curve:
    """Largest convex curve below ``f``."""
    hx, hy, tail = _hull_points(f)
    if math.isinf(tail):
        return Curve(hx, hy, Mode.LINEAR, Extension.PLUS_INFINITY, domain=f.domain)
    return Curve(hx, hy, Mode.LINEAR, Extension.FINAL_SLOPE, final_rate=tail / RATE_SCALE,
                 domain=f.domain)


# -- convolution ---------------------------------------------------------------------

def _convolve_convex(f: Curve, g: Curve) -> Curve:
    segs_f, tail_f = f.segments()
    segs_g, tail_g = g.segments()
    tail = min(tail_f, tail_g)
    pieces = sorted((s, l) for l, s in segs_f + segs_g if s < tail - SLOPE_TOL)
    t, v = [0.0], [0.0]
    for slope, length in pieces:
        if length <= 0:
            continue
        t.append(t[-1] + length)
        v.append(v[-1] + slope * length)
    if math.isinf(tail):
        return Curve(t, v, Mode.LINEAR, Extension.PLUS_INFINITY)
    return Curve(t, v, Mode.LINEAR, Extension.FINAL_SLOPE, final_rate=tail / RATE_SCALE)


def staircase_convolve_at(f: Curve, g: Curve, times: np.ndarray) -> np.ndarray:
    """(f * g)(times) for a staircase ``f`` and a continuous ``g``, exactly.

    On each step [t_j, t_{j+1}) ``f`` is constant, so the infimum over that
    interval is approached at its right end: f(t_{j+1}-) + g(t - t_{j+1}).
    """
    times = np.asarray(times, dtype=float)
    out = np.asarray(f(times), dtype=float) + g(0.0)
    for j in range(1, f.t.size):
        tj = f.t[j]
        k = np.searchsorted(times, tj - EPS_T, side="left")
        if k >= times.size:
            break
        cand = f.v[j - 1] + g(np.maximum(times[k:] - tj, 0.0))
        np.minimum(out[k:], cand, out=out[k:])
    return out


def _grid_convolve(F: np.ndarray, G: np.ndarray) -> np.ndarray:
    n = F.size
    out = np.full(n, INF)
    for j in range(n):
        if math.isinf(F[j]):
            break
        np.minimum(out[j:], F[j] + G[: n - j], out=out[j:])
    return out


def convolve(f: Curve, g: Curve, grid: GridConfig = DEFAULT_GRID,
             horizon: float | None = None) -> Curve:
    """Min-plus convolution (f * g)(t) = inf_{0<=s<=t} f(s) + g(t - s).

    Convex LINEAR pairs are merged exactly by slope.  A staircase against a
    continuous LINEAR curve is evaluated exactly at grid points; any other
    pair is scanned over the grid.  Grid results are LINEAR interpolations of
    the grid values over [0, horizon].
    """
    if f.is_convex() and g.is_convex() and f.mode is Mode.LINEAR and g.mode is Mode.LINEAR:
        return _convolve_convex(f, g)
    if horizon is None:
        horizon = grid.t_max
    if horizon > grid.t_max + EPS_T:
        raise CurveError(f"horizon {horizon} exceeds grid t_max {grid.t_max}")
    T = grid.times(horizon)
    step, cont = (f, g) if f.mode is Mode.STEP else (g, f)
    if (step.mode is Mode.STEP and cont.mode is Mode.LINEAR
            and step.extension is not Extension.FINAL_SLOPE):
        vals = staircase_convolve_at(step, cont, T)
    else:
        vals = _grid_convolve(np.asarray(f(T)), np.asarray(g(T)))
    return Curve.from_samples(T, vals)


def deconvolve_values(f: Curve, g: Curve, horizon: float, grid: GridConfig = DEFAULT_GRID,
                      t_out: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Raw windowed deconvolution sup_{0<=s<=horizon-t} f(t+s) - g(s) on grid points.

    Restricting s to the observation window can only lower the supremum, so
    the values are a lower bound on the unbounded deconvolution.
    """
    if horizon > f.domain + EPS_T or horizon > g.domain + EPS_T:
        raise CurveError(f"horizon {horizon} exceeds the observed domain of the inputs")
    if t_out is None:
        t_out = horizon
    t_out = min(t_out, horizon)
    T = np.arange(int(round(horizon / grid.dt)) + 1) * grid.dt
    F = np.asarray(f(T), dtype=float)
    G = np.asarray(g(T), dtype=float)
    n = T.size
    m_out = int(round(t_out / grid.dt)) + 1
    out = np.empty(m_out)
    ginf = np.isinf(G)
    with np.errstate(invalid="ignore"):
        for m in range(m_out):
            diff = F[m:] - G[: n - m]
            diff[ginf[: n - m]] = -INF
            out[m] = diff.max()
    return T[:m_out], out


def deconvolve(f: Curve, g: Curve, horizon: float, grid: GridConfig = DEFAULT_GRID,
               t_out: float | None = None) -> Curve:
    """Windowed deconvolution as a service curve on [0, t_out].

    The raw values are clamped at 0, the origin is re-anchored (non-causal
    data can make it positive) and the result is made non-decreasing.
    """
    T, out = deconvolve_values(f, g, horizon, grid, t_out)
    out = np.maximum(out, 0.0)
    out[0] = 0.0
    out = np.maximum.accumulate(out)
    return Curve.from_samples(T, out)


# -- Legendre transform --------------------------------------------------------------

class LegendreFn:
    """Sampled convex conjugate on the rate axis.

    ``rates`` in Mbps, ``values`` in Mb.  Between samples the function is
    linear; it is +inf outside the sampled range.  ``rate_limit`` records the
    rate beyond which the transformed curve's conjugate is +inf (None when
    finite everywhere).
    """

    __slots__ = ("rates", "values", "rate_limit")

    def __init__(self, rates, values, rate_limit: float | None = None):
        rates = np.array(rates, dtype=float)
        values = np.array(values, dtype=float)
        if rates.ndim != 1 or rates.shape != values.shape:
            raise CurveError("rates and values must be equal-length sequences")
        if np.any(np.diff(rates) <= 0):
            raise CurveError("rates must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise CurveError("stored Legendre values must be finite")
        rates.flags.writeable = False
        values.flags.writeable = False
        self.rates = rates
        self.values = values
        self.rate_limit = rate_limit

    def __repr__(self):
        return f"LegendreFn(n={self.rates.size}, rate_limit={self.rate_limit})"

    def __call__(self, r):
        scalar = np.ndim(r) == 0
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.full_like(r, INF)
        if self.rates.size:
            inside = (r >= self.rates[0] - 1e-12) & (r <= self.rates[-1] + 1e-12)
            out[inside] = np.interp(r[inside], self.rates, self.values)
        return float(out[0]) if scalar else out

    def __sub__(self, other: "LegendreFn") -> "LegendreFn":
        """Samplewise difference on the rates where both are finite."""
        common, ia, ib = np.intersect1d(self.rates, other.rates, return_indices=True)
        limit = None if self.rate_limit is None else self.rate_limit
        return LegendreFn(common, self.values[ia] - other.values[ib], limit)

    def __add__(self, other: "LegendreFn") -> "LegendreFn":
        common, ia, ib = np.intersect1d(self.rates, other.rates, return_indices=True)
        limits = [x for x in (self.rate_limit, other.rate_limit) if x is not None]
        return LegendreFn(common, self.values[ia] + other.values[ib], min(limits) if limits else None)

    def convexify(self) -> "LegendreFn":
        idx = _lower_hull(self.rates, self.values)
        return LegendreFn(self.rates[idx], self.values[idx], self.rate_limit)


def legendre(f: Curve, rates: Iterable[float]) -> LegendreFn:
    """Legendre transform L_f(r) = sup_t r t - f(t) at the given rates (Mbps).

    Rates above the curve's final rate are +inf and are dropped; the final
    rate itself is then added as the boundary sample.  A PLUS_INFINITY
    extension bounds the supremum to the last breakpoint.
    """
    rates = np.unique(np.asarray(list(rates), dtype=float))
    if rates.size == 0:
        raise CurveError("at least one rate is required")
    if np.any(rates < 0):
        raise CurveError("rates must be non-negative")
    hx, hy, tail = _hull_points(f)
    limit = None
    if math.isfinite(tail):
        limit = tail / RATE_SCALE
        over = rates > limit * (1 + 1e-12) + 1e-12
        if over.any():
            rates = np.union1d(rates[~over], [limit])
    vals = (np.outer(rates * RATE_SCALE, hx) - hy[None, :]).max(axis=1)
    return LegendreFn(rates, vals, limit)


def legendre_back(L: LegendreFn) -> Curve:
    """Inverse transform sup_r r t - L(r): an exact convex LINEAR curve.

    Conjugates of origin-anchored non-negative curves are non-negative and
    vanish at rate 0, so samples are clamped at 0 and the (0, 0) sample is
    always included; the result passes through the origin.  The tail rate is
    the largest sampled rate (the transform is +inf beyond it).
    """
    if L.rates.size == 0:
        raise CurveError("cannot invert an empty Legendre function")
    r = np.asarray(L.rates, dtype=float)
    y = np.maximum(np.asarray(L.values, dtype=float), 0.0)
    if r[0] > 0:
        r = np.insert(r, 0, 0.0)
        y = np.insert(y, 0, 0.0)
    else:
        y[0] = 0.0
    idx = _lower_hull(r, y)
    hr, hy = r[idx], y[idx]
    t, v = [0.0], [0.0]
    for j in range(1, hr.size):
        # vertex j-1 is the maximiser up to the time given by edge slope (Mb/Mbps -> ms)
        tj = (hy[j] - hy[j - 1]) / (hr[j] - hr[j - 1]) / RATE_SCALE
        vj = hr[j] * RATE_SCALE * tj - hy[j]
        if tj <= t[-1] + EPS_T:
            continue
        t.append(tj)
        v.append(max(vj, v[-1]))
    return Curve(t, v, Mode.LINEAR, Extension.FINAL_SLOPE, final_rate=float(hr[-1]))


# -- backlog -----------------------------------------------------------------------

def max_backlog(A: Curve, D: Curve, horizon: float, eps_v: float = EPS_V) -> float:
    """sup_{0<=t<=horizon} A(t) - D(t), exact for piecewise-linear curves.

    The difference is linear between breakpoints of either curve, so its
    supremum is attained at a breakpoint value or a left limit.
    """
    cand = np.union1d(A.t, D.t)
    cand = np.append(cand[cand <= horizon + EPS_T], horizon)
    right = np.asarray(A(cand)) - np.asarray(D(cand))
    with np.errstate(invalid="ignore"):
        left = np.asarray(A.left(cand)) - np.asarray(D.left(cand))
    diffs = np.concatenate([right, left[np.isfinite(left)]])
    if np.any(np.isnan(diffs)):
        raise CurveError("backlog undefined where both curves are infinite")
    if diffs.min() < -eps_v:
        raise NonCausalError(f"departures exceed arrivals by {-diffs.min():.6g} Mb")
    return float(max(diffs.max(), 0.0))


def sample(f: Curve, grid: GridConfig = DEFAULT_GRID, horizon: float | None = None):
    T = grid.times(horizon)
    return T, np.asarray(f(T))


def sup_gap(upper: Curve, lower: Curve, t_end: float, grid: GridConfig = DEFAULT_GRID) -> float:
    """sup over grid points in [0, t_end] of upper - lower."""
    T = grid.times(t_end)
    return float(np.max(np.asarray(upper(T)) - np.asarray(lower(T))))
