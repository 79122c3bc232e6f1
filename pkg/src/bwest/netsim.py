"""Packet-level link/tandem simulation and ideal min-plus linear servers.

A link queues packets at arrival, serves them at ``capacity`` and delivers
them ``prop_delay`` ms after the last bit leaves.  FIFO serves in arrival
order (on equal timestamps cross traffic goes first).  DRR keeps one queue
per class (probe, cross), adds ``quantum`` Mb of credit to a backlogged
queue on each visit and sends head packets while the credit covers them.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .minplus import (RATE_SCALE, Curve, Extension, GridConfig, DEFAULT_GRID, Mode,
                      constant_rate, convolve)
from .traffic import CROSS_PKT, Label, PacketEvents, cumulative_steps, renewal_cross, onoff_trace, OnOffParams

PROBE, CROSS = 0, 1


class Scheduler(str, Enum):
    FIFO = "fifo"
    DRR = "drr"


@dataclass(frozen=True)
class CrossSpec:
    """Recipe for per-run cross traffic; ``dist`` is cbr/exponential/pareto/onoff/none."""
    dist: str = "none"
    rate: float = 0.0
    pkt_size: float = CROSS_PKT
    shape: float = 1.5
    onoff: dict | None = None

    def generate(self, duration: float, seed: int) -> PacketEvents:
        if self.dist == "none" or self.rate <= 0 and self.dist != "onoff":
            return PacketEvents(np.empty(0), np.empty(0), Label.CROSS)
        if self.dist == "onoff":
            params = OnOffParams(**dict(self.onoff or {}, duration=duration, seed=seed))
            ev = onoff_trace(params, pkt_size=self.pkt_size)
            return PacketEvents(ev.times, ev.sizes, Label.CROSS, ev.meta)
        return renewal_cross(self.dist, self.rate, self.pkt_size, duration, seed, self.shape)


@dataclass(frozen=True)
class LinkSpec:
    capacity: float
    prop_delay: float = 0.0
    scheduler: Scheduler = Scheduler.FIFO
    quantum: float = CROSS_PKT
    cross: PacketEvents | CrossSpec | None = None
    buffer: float | None = None  # Mb; None = unbounded

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.prop_delay < 0:
            raise ValueError("propagation delay must be non-negative")
        if self.quantum <= 0:
            raise ValueError("DRR quantum must be positive")
        object.__setattr__(self, "scheduler", Scheduler(self.scheduler))

    def cross_events(self, duration: float, seed: int) -> PacketEvents:
        if self.cross is None:
            return PacketEvents(np.empty(0), np.empty(0), Label.CROSS)
        if isinstance(self.cross, CrossSpec):
            return self.cross.generate(duration, seed)
        return self.cross


@dataclass
class ProbeRecord:
    """Probe arrivals A (sender) and departures D (receiver), time 0 = probe start.

    Curves are raw: D still contains propagation delay and any clock offset.
    ``send``/``recv`` keep per-packet timestamps of delivered packets.
    """
    A: Curve
    D: Curve
    send: np.ndarray
    recv: np.ndarray
    sizes: np.ndarray
    dropped: int = 0
    partial: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def prop_delay(self) -> float:
        return float(self.meta.get("prop_delay", 0.0))

    def departures_shifted(self, delay: float | None = None) -> Curve:
        """D with ``delay`` (default: known propagation delay) removed."""
        d = self.prop_delay if delay is None else delay
        recv = np.maximum(self.recv - d, self.send)
        return _staircase(recv, self.sizes, domain=self.D.domain - d)

    @property
    def delays(self) -> np.ndarray:
        return self.recv - self.send


@dataclass
class LinkOutput:
    probe_times: np.ndarray      # departure (receiver) time per probe packet, nan if dropped
    cross_times: np.ndarray
    busy_time: float
    served_volume: float
    dropped_probe: int
    dropped_cross: int
    partial: bool


def _staircase(times, sizes, domain=math.inf) -> Curve:
    order = np.argsort(times, kind="stable")
    t, v = cumulative_steps(np.asarray(times)[order], np.asarray(sizes)[order])
    return Curve(t, v, Mode.STEP, Extension.CLAMP, domain=domain)


def _merge(probe: PacketEvents, cross: PacketEvents):
    times = np.concatenate([cross.times, probe.times])
    sizes = np.concatenate([cross.sizes, probe.sizes])
    cls = np.concatenate([np.full(len(cross), CROSS), np.full(len(probe), PROBE)])
    idx = np.concatenate([np.arange(len(cross)), np.arange(len(probe))])
    # ties: cross before probe (lexsort's last key is primary)
    order = np.lexsort(((cls == PROBE).astype(int), times))
    return times[order], sizes[order], cls[order], idx[order]


def _run_fifo(times, sizes, cls, C, buffer):
    n = times.size
    finish = np.full(n, np.nan)
    free = 0.0
    busy = 0.0
    in_sys: deque = deque()  # (finish, size) of accepted packets
    backlog = 0.0
    for i in range(n):
        a = times[i]
        while in_sys and in_sys[0][0] <= a:
            backlog -= in_sys.popleft()[1]
        if buffer is not None and backlog + sizes[i] > buffer + 1e-12:
            continue
        start = a if a > free else free
        tx = sizes[i] / (C * RATE_SCALE)
        free = start + tx
        busy += tx
        finish[i] = free
        in_sys.append((free, sizes[i]))
        backlog += sizes[i]
    return finish, busy


def _run_drr(times, sizes, cls, C, quantum, buffer):
    n = times.size
    finish = np.full(n, np.nan)
    queues = (deque(), deque())
    deficit = [0.0, 0.0]
    active: deque = deque()
    qbits = [0.0, 0.0]
    now = 0.0
    busy = 0.0
    i = 0
    serving = -1

    def admit(upto):
        nonlocal i
        while i < n and times[i] <= upto:
            c = cls[i]
            if buffer is not None and qbits[0] + qbits[1] + sizes[i] > buffer + 1e-12:
                i += 1
                continue
            if not queues[c] and c not in active and c != serving:
                active.append(c)
                deficit[c] = 0.0
            queues[c].append(i)
            qbits[c] += sizes[i]
            i += 1

    while i < n or active:
        if not active:
            now = max(now, times[i])
            admit(now)
            continue
        c = active.popleft()
        serving = c
        deficit[c] += quantum
        q = queues[c]
        while q and sizes[q[0]] <= deficit[c] + 1e-15:
            k = q.popleft()
            qbits[c] -= sizes[k]
            deficit[c] -= sizes[k]
            tx = sizes[k] / (C * RATE_SCALE)
            now += tx
            busy += tx
            finish[k] = now
            admit(now)
        serving = -1
        if q:
            active.append(c)
        else:
            deficit[c] = 0.0
    return finish, busy


def run_link(probe: PacketEvents, link: LinkSpec, cross: PacketEvents,
             until: float = math.inf) -> LinkOutput:
    """Serve probe + cross packets on one link; returns receiver-side times."""
    times, sizes, cls, idx = _merge(probe, cross)
    if link.scheduler is Scheduler.FIFO:
        finish, busy = _run_fifo(times, sizes, cls, link.capacity, link.buffer)
    else:
        finish, busy = _run_drr(times, sizes, cls, link.capacity, link.quantum, link.buffer)
    dep = finish + link.prop_delay
    late = dep > until
    partial = bool(np.any(late & (cls == PROBE)))
    dropped = np.isnan(finish)
    dep = np.where(late, np.nan, dep)
    probe_dep = np.full(len(probe), np.nan)
    cross_dep = np.full(len(cross), np.nan)
    probe_dep[idx[cls == PROBE]] = dep[cls == PROBE]
    cross_dep[idx[cls == CROSS]] = dep[cls == CROSS]
    served = float(np.nansum(np.where(dropped, 0.0, sizes)))
    return LinkOutput(probe_dep, cross_dep, busy, served,
                      int(np.sum(dropped & (cls == PROBE))), int(np.sum(dropped & (cls == CROSS))),
                      partial)


def _record(sent: PacketEvents, recv: np.ndarray, t0: float, meta: dict,
            offset: float = 0.0, partial: bool = False) -> ProbeRecord:
    ok = ~np.isnan(recv)
    send = sent.times[ok] - t0
    rec = recv[ok] - t0 + offset
    sizes = sent.sizes[ok]
    horizon = float(np.max(rec)) if rec.size else 0.0
    A = _staircase(sent.times - t0, sent.sizes, domain=max(horizon, float(sent.times[-1] - t0)))
    D = _staircase(rec, sizes, domain=max(horizon, float(sent.times[-1] - t0)))
    return ProbeRecord(A, D, send, rec, sizes, dropped=int((~ok).sum()), partial=partial, meta=meta)


def simulate_link(probe: PacketEvents, link: LinkSpec, until: float | None = None,
                  seed: int = 0, offset: float = 0.0) -> ProbeRecord:
    """Send ``probe`` over one link; the record's time origin is the probe start."""
    return simulate_path(probe, [link], until, seed, offset)[-1]


def _until(probe: PacketEvents, links: Sequence[LinkSpec], until):
    if until is not None:
        return float(until)
    # enough time to drain the probe even at the slowest link with full cross load
    vol = probe.volume
    slow = min(l.capacity for l in links)
    return float(probe.times[-1] + sum(l.prop_delay for l in links)
                 + 4 * vol / (slow * RATE_SCALE) + 100.0)


def simulate_path(probe: PacketEvents, links: Sequence[LinkSpec], until: float | None = None,
                  seed: int = 0, offset: float = 0.0) -> list[ProbeRecord]:
    """Chain links; returns one record per link boundary, the last being end-to-end.

    Each link draws its own cross traffic (seeded by ``seed`` and the link
    index); cross packets leave the path after their link.
    """
    if not links:
        raise ValueError("need at least one link")
    until = _until(probe, links, until)
    t0 = float(probe.meta.get("start", 0.0))
    records = []
    current = probe
    alive = np.ones(len(probe), dtype=bool)
    recv_full = np.full(len(probe), np.nan)
    prop = 0.0
    partial = False
    for k, link in enumerate(links):
        cross = link.cross_events(until, seed * 1009 + k)
        out = run_link(current, link, cross, until)
        prop += link.prop_delay
        partial |= out.partial
        recv_full = np.full(len(probe), np.nan)
        recv_full[np.flatnonzero(alive)] = out.probe_times
        alive = ~np.isnan(recv_full)
        meta = dict(probe.meta, link_index=k, prop_delay=prop, until=until, seed=seed,
                    busy_time=out.busy_time, served_volume=out.served_volume,
                    cross_dropped=out.dropped_cross)
        records.append(_record(probe, recv_full, t0, meta, offset, partial))
        ok = ~np.isnan(out.probe_times)
        nxt_t = out.probe_times[ok]
        order = np.argsort(nxt_t, kind="stable")
        current = PacketEvents(nxt_t[order], current.sizes[ok][order], Label.PROBE)
        # keep per-packet identity through reordering (DRR cannot reorder a class)
        if not np.all(order == np.arange(order.size)):
            raise RuntimeError("probe packets were reordered inside a link")
    return records


# -- fluid references ---------------------------------------------------------------

def linear_server(A: Curve, S: Curve, grid: GridConfig = DEFAULT_GRID,
                  horizon: float | None = None) -> Curve:
    """Output of an ideal min-plus linear system with service curve ``S``."""
    return convolve(A, S, grid, horizon)


def fifo_fluid(r: float, C: float, r_c: float) -> Curve:
    """Probe departures of a fluid FIFO link fed by constant-rate probe and cross traffic."""
    if min(r, C, r_c) <= 0:
        raise ValueError("rates must be positive")
    if r <= C - r_c:
        return constant_rate(r)
    return constant_rate(r / (r + r_c) * C)


# -- probers -------------------------------------------------------------------------

class PathProber:
    """Sends probes over a simulated path with fresh cross traffic per probe."""

    def __init__(self, links: Sequence[LinkSpec], seed: int = 0, warmup: float = 50.0,
                 offset: float = 0.0):
        self.links = list(links)
        self.seed = seed
        self.warmup = warmup
        self.offset = offset
        self.count = 0

    @property
    def prop_delay(self) -> float:
        return sum(l.prop_delay for l in self.links)

    def __call__(self, probe: PacketEvents) -> ProbeRecord:
        start = float(probe.meta.get("start", 0.0))
        ev = probe.shifted(self.warmup - start)
        ev.meta["start"] = self.warmup
        self.count += 1
        rec = simulate_path(ev, self.links, seed=self.seed * 7919 + self.count,
                            offset=self.offset)[-1]
        return rec


class FluidProber:
    """Probes an ideal linear system ``S`` (no packets, no noise).

    With ``fluid=True`` a constant-rate train becomes the fluid curve r t
    observed over [0, horizon]; other probes are fed as staircases.
    """

    def __init__(self, S: Curve, grid: GridConfig = DEFAULT_GRID, fluid: bool = True,
                 horizon: float | None = None):
        self.S = S
        self.grid = grid
        self.fluid = fluid
        self.horizon = grid.t_max if horizon is None else horizon
        self.prop_delay = 0.0

    def record(self, A: Curve, meta: dict | None = None) -> ProbeRecord:
        D = linear_server(A, self.S, self.grid, min(self.horizon, self.grid.t_max))
        if math.isfinite(A.domain):
            D = D.replace(domain=A.domain)
        return ProbeRecord(A, D, np.empty(0), np.empty(0), np.empty(0), meta=dict(meta or {}))

    def __call__(self, probe: PacketEvents) -> ProbeRecord:
        if self.fluid and probe.meta.get("kind") == "cbr":
            A = constant_rate(probe.meta["rate"]).replace(domain=self.horizon)
            return self.record(A, dict(probe.meta))
        send = probe.times - float(probe.meta.get("start", 0.0))
        A = _staircase(send, probe.sizes, domain=self.horizon)
        rec = self.record(A, dict(probe.meta))
        # packet j has left once the fluid output reaches its cumulative size
        T = self.grid.times(min(self.horizon, self.grid.t_max))
        DT = np.asarray(rec.D(T))
        levels = np.cumsum(probe.sizes)
        k = np.searchsorted(DT, levels - 1e-12, side="left")
        ok = k < T.size
        recv = np.full(levels.size, np.nan)
        k1 = np.maximum(k[ok], 1)
        lo, hi = DT[k1 - 1], DT[k1]
        frac = np.where(hi > lo, (levels[ok] - lo) / np.where(hi > lo, hi - lo, 1.0), 1.0)
        recv[ok] = np.maximum(T[k1 - 1] + frac * self.grid.dt, send[ok])
        rec.partial = not ok.all()
        good = ~np.isnan(recv)
        rec.send, rec.recv, rec.sizes = send[good], recv[good], probe.sizes[good]
        rec.D = _staircase(rec.recv, rec.sizes, domain=self.horizon)
        return rec
