"""Service-curve estimators, stopping criteria and analytic oracles.

Three estimators share one output type:

* passive: deconvolve observed departures by arrivals;
* rate scan: constant-rate trains of increasing rate, maximum backlog per
  rate, then the inverse Legendre transform of the backlog samples;
* chirp: one train with geometrically shrinking gaps, subtraction of the
  two Legendre transforms, then the inverse transform.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .minplus import (EPS_T, EPS_V, RATE_SCALE, Curve, CurveError, DEFAULT_GRID, Extension,
                      GridConfig, LegendreFn, Mode, _lower_hull, convolve, deconvolve, legendre,
                      legendre_back, max_backlog, staircase_convolve_at)
from .netsim import ProbeRecord
from .traffic import PROBE_PKT, cbr_train


class Method(str, Enum):
    PASSIVE = "passive"
    RATE_SCAN = "rate_scan"
    CHIRP = "chirp"


class Decision(str, Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class Estimate:
    curve: Curve
    method: Method
    provenance: dict = field(default_factory=dict)

    def long_run_rate(self, t0: float, t1: float) -> float:
        """Average slope (Mbps) of the estimate over [t0, t1]."""
        return float((self.curve(t1) - self.curve(t0)) / ((t1 - t0) * RATE_SCALE))


# -- passive -------------------------------------------------------------------------

def passive_estimate(rec: ProbeRecord, grid: GridConfig = DEFAULT_GRID,
                     horizon: float | None = None, t_out: float | None = None,
                     delay: float | None = 0.0) -> Estimate:
    """S~ = D (/) A over the observed window.

    ``delay`` is removed from packet departures first (None: the record's
    known propagation delay, 0: use D as recorded).
    """
    A = rec.A
    D = rec.D
    if delay and rec.recv.size:
        D = rec.departures_shifted(delay)
    elif delay is None and rec.recv.size:
        D = rec.departures_shifted()
    if horizon is None:
        horizon = min(A.domain, D.domain)
        horizon = math.floor(horizon / grid.dt + 1e-9) * grid.dt
    if not horizon > 0 or A(horizon) <= 0:
        raise CurveError("empty probe record")
    S = deconvolve(D, A, horizon, grid, t_out)
    return Estimate(S, Method.PASSIVE, dict(rec.meta, horizon=horizon))


# -- stopping criteria ----------------------------------------------------------------

def hull_gap(rates: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """values - (lower convex hull of the points)(rates), i.e. B - L(L(B))."""
    r = np.asarray(rates, dtype=float)
    b = np.asarray(values, dtype=float)
    if r.size < 3:
        return np.zeros(r.size)
    idx = _lower_hull(r, b)
    return b - np.interp(r, r[idx], b[idx])


@dataclass
class ScanState:
    alpha: float = 4.0       # ms
    window: int = 3
    samples: list = field(default_factory=list)      # (r, b_max)
    delta_b: list = field(default_factory=list)      # (r, dB/r in ms), recomputed per step
    filtered: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    unsteady: list = field(default_factory=list)     # backlog still growing when the train ended
    records: list = field(default_factory=list, repr=False)
    stopped_at: float | None = None
    detected_at: float | None = None
    hull_boundary: float | None = None
    reason: str = ""

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for r, _ in self.samples])

    @property
    def bmax(self) -> np.ndarray:
        return np.array([b for _, b in self.samples])

    def accepted(self) -> list:
        if self.stopped_at is None:
            return list(self.samples)
        return [(r, b) for r, b in self.samples if r <= self.stopped_at + 1e-9]

    def trace(self) -> list[dict]:
        rows = []
        for k, (r, b) in enumerate(self.samples):
            rows.append({"r_mbps": r, "b_max_mb": b,
                         "db_over_r_ms": self.delta_b[k][1] if k < len(self.delta_b) else None,
                         "decision": self.decisions[k].value if k < len(self.decisions) else None})
        return rows


def _trailing_median(x: np.ndarray, w: int) -> np.ndarray:
    return np.array([np.median(x[max(0, i - w + 1): i + 1]) for i in range(x.size)])


def backlog_convexity_criterion(state: ScanState) -> Decision:
    """Dismiss linearity once the median-filtered dB(r)/r exceeds alpha.

    dB is recomputed for every sample against the lower hull of all samples
    seen so far (the newest sample is always a hull vertex, so testing it
    alone would never fire).  On a stop the regime boundary is taken as the
    hull vertex that opens the run of lifted samples behind the trigger;
    ``stopped_at`` is that rate and ``detected_at`` the rate that fired.
    """
    if not state.samples:
        raise ValueError("no samples")
    r, b = state.rates, state.bmax
    db = hull_gap(r, b)
    ratio = np.where(r > 0, db / np.where(r > 0, r, 1.0) / RATE_SCALE, 0.0)  # Mb/Mbps -> ms
    filt = _trailing_median(ratio, state.window)
    state.delta_b = list(zip(r.tolist(), ratio.tolist()))
    state.filtered = filt.tolist()
    hit = np.flatnonzero(filt > state.alpha)
    if hit.size == 0:
        state.decisions.append(Decision.CONTINUE)
        return Decision.CONTINUE
    # walk back through the lifted run; a lone hull vertex inside it is an
    # outlier the median filter already smoothed over
    k = int(hit[0])
    while k > 0 and (db[k] > EPS_V or filt[k] > 1e-9):
        k -= 1
    state.detected_at = float(r[-1])
    state.stopped_at = state.hull_boundary = float(r[k])
    state.reason = "backlog_convexity"
    state.decisions.append(Decision.STOP)
    return Decision.STOP


def _departures(rec: ProbeRecord) -> Curve:
    return rec.departures_shifted() if rec.recv.size else rec.D


def consistency_gap(rec: ProbeRecord, S: Curve) -> float:
    """max_t (A * S)(t) - D(t), evaluated where D is lowest relative to A * S.

    D is a staircase, so the gap peaks just before a step of D; those left
    limits plus the horizon end are checked exactly.  Fluid records are
    checked on their breakpoints.
    """
    D = _departures(rec)
    A = rec.A
    if D.mode is Mode.STEP:
        ts = np.append(D.t[1:], D.t[-1] + 1.0)
        lhs = np.asarray(D.left(ts))
        ts_eval = ts - 2 * EPS_T
    else:
        ts_eval = D.t
        lhs = D.v
    if A.mode is Mode.STEP:
        conv = staircase_convolve_at(A, S, ts_eval)
    else:
        conv = np.asarray(convolve(A, S)(ts_eval))
    return float(np.max(conv - lhs))


def nonlinearity_criterion(history: Sequence[ProbeRecord], estimates: Sequence[Curve],
                           eps_b: float = PROBE_PKT) -> int | None:
    """Smallest k such that some D_i (i <= k) falls below A_i * S~_k by more than eps_b."""
    if len(history) != len(estimates):
        raise ValueError("one estimate per probe is required")
    for k in range(1, len(history)):
        for i in range(k + 1):
            if consistency_gap(history[i], estimates[k]) > eps_b:
                return k
    return None


@dataclass(frozen=True)
class BacklogConvexity:
    """``refine`` lowers the stop rate until the estimate explains every probe."""
    alpha: float = 4.0
    window: int = 3
    refine: bool = True
    eps_b: float = PROBE_PKT


@dataclass(frozen=True)
class NonLinearity:
    eps_b: float = PROBE_PKT


# -- rate scan -----------------------------------------------------------------------

def bmax_estimate(samples: Sequence[tuple[float, float]]) -> Curve:
    """Inverse Legendre transform of piecewise-linear backlog samples (+inf past the last rate)."""
    r = np.array([s[0] for s in samples])
    b = np.array([s[1] for s in samples])
    return legendre_back(LegendreFn(r, b, rate_limit=float(r[-1])))


def _measure(rec: ProbeRecord) -> tuple[float, bool]:
    D = _departures(rec)
    A = rec.A
    horizon = min(A.domain, D.domain)
    if not math.isfinite(horizon):
        horizon = max(A.t[-1], D.t[-1])
    b = max_backlog(A, D, horizon)
    if A.mode is not Mode.STEP:
        return b, False
    # backlog still at its maximum when the last probe bit was sent
    t_last = A.t[-1]
    unsteady = bool(A(t_last) - D.left(t_last) >= b - PROBE_PKT / 2) and b > 2 * PROBE_PKT
    return b, unsteady


def rate_scan(prober: Callable[..., ProbeRecord], r_start: float, r_inc: float, r_limit: float,
              n_packets: int = 400, pkt_size: float = PROBE_PKT,
              criterion: BacklogConvexity | NonLinearity | None = None,
              bisect_steps: int = 0) -> tuple[Estimate, ScanState]:
    """Ascending constant-rate scan.

    Each rate gets a fresh train; its maximum backlog (propagation delay
    removed) is one sample of L_S.  The scan ends when ``criterion`` fires or
    ``r_limit`` is exceeded.  ``bisect_steps`` > 0 refines the stop rate by
    bisection between the boundary and the next probed rate.
    """
    if r_start <= 0 or r_inc <= 0:
        raise ValueError("r_start and r_inc must be positive")
    if isinstance(criterion, BacklogConvexity):
        state = ScanState(alpha=criterion.alpha, window=criterion.window)
    else:
        state = ScanState()
    estimates: list[Curve] = []
    r = r_start
    while r <= r_limit + 1e-9:
        rec = prober(cbr_train(r, n_packets, pkt_size))
        b, unsteady = _measure(rec)
        state.samples.append((float(r), b))
        state.unsteady.append(unsteady)
        state.records.append(rec)
        if isinstance(criterion, BacklogConvexity):
            if backlog_convexity_criterion(state) is Decision.STOP:
                break
        elif isinstance(criterion, NonLinearity):
            estimates.append(bmax_estimate(state.samples))
            k = nonlinearity_criterion(state.records, estimates, criterion.eps_b)
            if k is not None:
                state.decisions.append(Decision.STOP)
                state.detected_at = float(r)
                state.stopped_at = state.samples[k - 1][0]
                state.reason = "nonlinearity"
                break
            state.decisions.append(Decision.CONTINUE)
        else:
            state.decisions.append(Decision.CONTINUE)
        r = r_start + len(state.samples) * r_inc

    if isinstance(criterion, BacklogConvexity) and state.samples:
        if bisect_steps and state.stopped_at is not None:
            _bisect(state, prober, n_packets, pkt_size, r_inc, bisect_steps)
        if criterion.refine:
            last = state.samples[-1][0]
            if state.stopped_at is None:
                # ran to r_limit undetected: still drop rates the estimate cannot explain
                state.stopped_at = last
                if refine_boundary(state, criterion.eps_b) == last:
                    state.stopped_at = None
                else:
                    state.reason = "consistency"
            else:
                refine_boundary(state, criterion.eps_b)

    curve = bmax_estimate(state.accepted())
    prov = {"r_start": r_start, "r_inc": r_inc, "r_limit": r_limit, "n_packets": n_packets,
            "pkt_size": pkt_size, "stopped_at": state.stopped_at,
            "detected_at": state.detected_at, "reason": state.reason}
    return Estimate(curve, Method.RATE_SCAN, prov), state


def _bisect(state: ScanState, prober, n_packets, pkt_size, r_inc, steps):
    lo = state.stopped_at
    hi = lo + r_inc
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        rec = prober(cbr_train(mid, n_packets, pkt_size))
        b, unsteady = _measure(rec)
        i = int(np.searchsorted(state.rates, mid))
        state.samples.insert(i, (mid, b))
        state.records.insert(i, rec)
        state.unsteady.insert(i, unsteady)
        db = hull_gap(state.rates, state.bmax)
        # mid still linear if it sits on the hull of all samples
        if db[i] <= EPS_V:
            lo = mid
        else:
            hi = mid
    state.stopped_at = state.hull_boundary = lo


def refine_boundary(state: ScanState, eps_b: float = PROBE_PKT) -> float | None:
    """Lower ``stopped_at`` to the largest accepted rate whose estimate is
    consistent (within ``eps_b``) with every probe of the scan.

    Near the regime boundary the backlog samples of noisy or multi-hop paths
    can bend upwards before they turn concave, which puts a hull vertex just
    past the boundary; the consistency check removes such rates.
    """
    if state.stopped_at is None:
        return None
    top = int(np.flatnonzero(state.rates <= state.stopped_at + 1e-9)[-1])
    for k in range(top, -1, -1):
        S = bmax_estimate(state.samples[: k + 1])
        if all(consistency_gap(rec, S) <= eps_b for rec in state.records):
            state.stopped_at = float(state.samples[k][0])
            return state.stopped_at
    state.stopped_at = float(state.samples[0][0])
    return state.stopped_at


# -- chirp ---------------------------------------------------------------------------

def chirp_rates_of(rec: ProbeRecord) -> np.ndarray:
    """Per-packet instantaneous rates of the chirp (from meta, else from send gaps)."""
    rates = rec.meta.get("rates")
    if rates is not None:
        return np.asarray(rates, dtype=float)
    gaps = np.diff(np.concatenate([[0.0], rec.send]))
    return rec.sizes / (gaps * RATE_SCALE)


def _final_slope_departures(rec: ProbeRecord) -> Curve:
    D = _departures(rec)
    if D.mode is Mode.STEP:
        if D.t.size < 3:
            raise CurveError("degenerate chirp")
        tail = (D.v[-1] - D.v[-2]) / ((D.t[-1] - D.t[-2]) * RATE_SCALE)
        return Curve(D.t, D.v, Mode.STEP, Extension.FINAL_SLOPE, final_rate=tail)
    # fluid record: truncate where D stops growing, continue with the last slope
    last = int(np.flatnonzero(np.diff(D.v) > 0)[-1]) + 1
    t, v = D.t[: last + 1], D.v[: last + 1]
    tail = (v[-1] - v[-2]) / ((t[-1] - t[-2]) * RATE_SCALE)
    return Curve(t, v, Mode.LINEAR, Extension.FINAL_SLOPE, final_rate=tail)


def chirp_estimate(rec: ProbeRecord, stop_rate: float | None = None) -> Estimate:
    """S~ = L(L_D~ - L_A~) over the chirp's own rates.

    A~ is +inf after the last probe packet and D~ continues with the slope of
    its final inter-departure gap, so both transforms are finite on the
    probed rates.  Negative differences are clamped at 0.
    """
    if rec.A.t.size < 4:
        raise CurveError("degenerate chirp: fewer than three packets")
    rates = chirp_rates_of(rec)
    r_max = float(rec.meta.get("r_max", rates.max() * (1 + 1e-12)))
    rates = rates[rates <= r_max]
    if stop_rate is not None:
        rates = rates[rates <= stop_rate + 1e-9]
    A_t = rec.A.replace(extension=Extension.PLUS_INFINITY) if rec.A.mode is Mode.STEP else rec.A
    D_t = _final_slope_departures(rec)
    LD = legendre(D_t, rates)
    LA = legendre(A_t, LD.rates)
    diff = LD - LA
    diff = LegendreFn(diff.rates, np.maximum(diff.values, 0.0), diff.rate_limit)
    S = legendre_back(diff)
    return Estimate(S, Method.CHIRP, dict(rec.meta, stop_rate=stop_rate,
                                          n_rates=int(diff.rates.size)))


def chirp_stop_rate(rec: ProbeRecord, persistence: int = 5) -> float | None:
    """Heuristic: rate of the first packet after which one-way delays rise ``persistence`` times in a row."""
    d = rec.delays
    if d.size < persistence + 1:
        return None
    up = np.diff(d) > 1e-12
    rates = chirp_rates_of(rec)
    run = 0
    for k, u in enumerate(up):
        run = run + 1 if u else 0
        if run >= persistence:
            start = k - persistence + 1
            return float(rates[min(start, rates.size - 1)])
    return None


# -- oracles -------------------------------------------------------------------------

def fifo_theoretical_bmax(L: float, C: float, r_c: float, r: float) -> float:
    """Peak backlog of an L-Mb constant-rate train at a fluid FIFO link."""
    if min(L, C, r) <= 0 or r_c < 0:
        raise ValueError("parameters must be positive")
    if r <= C - r_c:
        return 0.0
    return L * (1 - C / (r + r_c))


def available_bandwidth_oracle(C: float, cross: Curve, t: float, tau: float) -> tuple[float, bool]:
    """Average unused capacity over [t, t + tau] in Mbps, and a saturation flag."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if t + tau > cross.domain + EPS_T:
        raise CurveError("window exceeds the cross-traffic observation")
    used = (cross(t + tau) - cross(t)) / (tau * RATE_SCALE)
    avail = C - used
    if avail < 0:
        return 0.0, True
    return float(avail), False


# -- export --------------------------------------------------------------------------

def export_estimate(est: Estimate, path, state: ScanState | None = None) -> None:
    """Curve CSV at ``path`` plus ``path`` with a ``.json`` sidecar."""
    from .io import write_curve

    path = Path(path)
    write_curve(est.curve, path)
    side = {"method": est.method.value,
            "provenance": {k: v for k, v in est.provenance.items() if _jsonable(v)}}
    if state is not None:
        side["stop_rate"] = state.stopped_at
        side["detected_at"] = state.detected_at
        side["criterion_trace"] = state.trace()
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False
