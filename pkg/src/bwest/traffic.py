"""Probe patterns, cross-traffic sources and trace ingestion.

Every generator returns :class:`PacketEvents`: packet timestamps (ms, taken
at the last transmitted bit) with sizes in Mb.  Randomised generators draw
from numpy's PCG64 bit generator seeded with the given integer, so a seed
fixes the event list bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .minplus import RATE_SCALE, Curve, Extension, Mode

PROBE_PKT = 1472 * 8e-6  # Mb
CROSS_PKT = 800 * 8e-6


def bytes_to_mb(n_bytes: float) -> float:
    return n_bytes * 8e-6


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class Label(str, Enum):
    PROBE = "probe"
    CROSS = "cross"


@dataclass(frozen=True)
class PacketEvents:
    times: np.ndarray
    sizes: np.ndarray
    label: Label = Label.PROBE
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        sizes = np.asarray(self.sizes, dtype=float)
        if times.shape != sizes.shape or times.ndim != 1:
            raise ValueError("times and sizes must be equal-length 1-d arrays")
        if np.any(np.diff(times) < 0):
            raise ValueError("event times must be non-decreasing")
        if np.any(sizes <= 0):
            raise ValueError("packet sizes must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return self.times.size

    @property
    def volume(self) -> float:
        return float(self.sizes.sum())

    def shifted(self, offset: float) -> "PacketEvents":
        return PacketEvents(self.times + offset, self.sizes, self.label, dict(self.meta))

    def window(self, start: float, end: float) -> "PacketEvents":
        keep = (self.times >= start) & (self.times <= end)
        return PacketEvents(self.times[keep], self.sizes[keep], self.label, dict(self.meta))


@dataclass(frozen=True)
class OnOffParams:
    n_sources: int
    peak_rate: float
    p: float
    q: float
    slot: float = 1.0
    duration: float = 1000.0
    seed: int = 0
    warmup: float = 1000.0

    def __post_init__(self):
        if not (0 <= self.p <= 1 and 0 <= self.q <= 1):
            raise ValueError("p and q are probabilities")
        if self.slot <= 0:
            raise ValueError("slot must be positive")
        if self.n_sources < 1 or self.peak_rate <= 0:
            raise ValueError("need at least one source with a positive peak rate")

    @property
    def mean_rate(self) -> float:
        if self.p + self.q == 0:
            return 0.0
        return self.n_sources * self.peak_rate * self.q / (self.p + self.q)


@dataclass(frozen=True)
class ChirpParams:
    r_start: float
    r_max: float
    gamma: float
    pkt_size: float = PROBE_PKT

    def __post_init__(self):
        if not self.r_start < self.r_max:
            raise ValueError("r_start must be below r_max")
        if not self.gamma > 1:
            raise ValueError("spread factor must exceed 1")
        if self.r_start <= 0 or self.pkt_size <= 0:
            raise ValueError("rates and packet size must be positive")


def gap_ms(size: float, rate: float) -> float:
    """Transmission time (ms) of ``size`` Mb at ``rate`` Mbps."""
    return size / (rate * RATE_SCALE)


def cbr_train(rate: float, n_packets: int, pkt_size: float = PROBE_PKT,
              start: float = 0.0) -> PacketEvents:
    """Constant-rate train; packet i (1-based) completes at start + i * pkt_size / rate."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if n_packets < 2:
        raise ValueError("a train has at least two packets")
    g = gap_ms(pkt_size, rate)
    times = start + g * np.arange(1, n_packets + 1)
    return PacketEvents(times, np.full(n_packets, pkt_size), Label.PROBE,
                        {"kind": "cbr", "rate": rate, "n_packets": n_packets,
                         "pkt_size": pkt_size, "start": start})


def chirp_rates(p: ChirpParams) -> np.ndarray:
    """Instantaneous rates r_start * gamma^k strictly below r_max."""
    n = math.ceil(math.log(p.r_max / p.r_start) / math.log(p.gamma) - 1e-12)
    rates = p.r_start * p.gamma ** np.arange(n)
    return rates[rates < p.r_max]


def rate_chirp(p: ChirpParams, start: float = 0.0) -> PacketEvents:
    """Single train whose gaps shrink by ``gamma`` each packet.

    Packet k completes one gap pkt_size / (r_start gamma^k) after packet k-1
    (the first gap is measured from ``start``); emission ends before the
    instantaneous rate reaches ``r_max``.
    """
    rates = chirp_rates(p)
    gaps = p.pkt_size / (rates * RATE_SCALE)
    times = start + np.cumsum(gaps)
    return PacketEvents(times, np.full(rates.size, p.pkt_size), Label.PROBE,
                        {"kind": "chirp", "r_start": p.r_start, "r_max": p.r_max,
                         "gamma": p.gamma, "pkt_size": p.pkt_size, "start": start,
                         "rates": rates.tolist()})


def onoff_trace(p: OnOffParams, pkt_size: float | None = None) -> PacketEvents:
    """Aggregate of independent two-state Markov sources sampled per slot.

    Sources start Off; the chain runs through ``warmup`` ms that are then
    discarded.  Each slot with k sources On yields one fluid event of
    k * peak_rate * slot at the slot's end.  With ``pkt_size`` the slot volume
    is instead cut into packets spread evenly over the slot.
    """
    rng = rng_for(p.seed)
    n_warm = int(round(p.warmup / p.slot))
    n_slots = int(round(p.duration / p.slot))
    u = rng.random((n_warm + n_slots, p.n_sources))
    on = np.zeros(p.n_sources, dtype=bool)
    counts = np.empty(n_warm + n_slots, dtype=np.int64)
    for k in range(n_warm + n_slots):
        counts[k] = on.sum()
        # On -> Off with prob p, Off -> On with prob q
        on = np.where(on, u[k] >= p.p, u[k] < p.q)
    counts = counts[n_warm:]
    per_on = p.peak_rate * RATE_SCALE * p.slot
    slot_end = (np.arange(n_slots) + 1) * p.slot
    busy = counts > 0
    meta = {"kind": "onoff", "slot": p.slot, "n_sources": p.n_sources,
            "peak_rate": p.peak_rate, "p": p.p, "q": p.q, "seed": p.seed,
            "duration": p.duration}
    if pkt_size is None:
        return PacketEvents(slot_end[busy], counts[busy] * per_on, Label.PROBE,
                            dict(meta, fluid=True))
    times, sizes = [], []
    for end, k in zip(slot_end[busy], counts[busy]):
        vol = k * per_on
        n = max(1, int(round(vol / pkt_size)))
        times.append(end - p.slot + p.slot * np.arange(1, n + 1) / n)
        sizes.append(np.full(n, vol / n))
    if not times:
        return PacketEvents(np.empty(0), np.empty(0), Label.PROBE, meta)
    return PacketEvents(np.concatenate(times), np.concatenate(sizes), Label.PROBE, meta)


class Dist(str, Enum):
    CBR = "cbr"
    EXPONENTIAL = "exponential"
    PARETO = "pareto"


def renewal_cross(dist: Dist | str, mean_rate: float, pkt_size: float = CROSS_PKT,
                  duration: float = 1000.0, seed: int = 0, shape: float = 1.5) -> PacketEvents:
    """Renewal cross traffic of fixed-size packets with mean rate ``mean_rate``.

    CBR starts at a seeded uniform phase; Pareto interarrivals use scale
    mean*(shape-1)/shape so the mean interarrival is exact.
    """
    dist = Dist(dist)
    if mean_rate <= 0:
        raise ValueError("mean_rate must be positive")
    if dist is Dist.PARETO and shape <= 1:
        raise ValueError("Pareto shape must exceed 1 for a finite mean")
    rng = rng_for(seed)
    mean_gap = gap_ms(pkt_size, mean_rate)
    n = int(duration / mean_gap * 1.2) + 16
    if dist is Dist.CBR:
        times = rng.random() * mean_gap + mean_gap * np.arange(n)
    else:
        while True:
            if dist is Dist.EXPONENTIAL:
                gaps = rng.exponential(mean_gap, n)
            else:
                scale = mean_gap * (shape - 1) / shape
                gaps = scale * (1.0 + rng.pareto(shape, n))
            times = np.cumsum(gaps)
            if times[-1] > duration:
                break
            n *= 2
    times = times[times <= duration]
    return PacketEvents(times, np.full(times.size, pkt_size), Label.CROSS,
                        {"kind": dist.value, "mean_rate": mean_rate, "pkt_size": pkt_size,
                         "seed": seed, "duration": duration})


# -- traces and curves -------------------------------------------------------------

def load_trace(path) -> PacketEvents:
    """Read a ``t_ms,size_mb`` CSV (header optional, '#' lines ignored)."""
    times, sizes = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if row[0].strip() == "t_ms":
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns, got {len(row)}")
            try:
                t, s = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if times and t < times[-1]:
                raise ValueError(f"{path}:{lineno}: timestamps must be non-decreasing")
            if t < 0 or s <= 0:
                raise ValueError(f"{path}:{lineno}: need t >= 0 and size > 0")
            times.append(t)
            sizes.append(s)
    return PacketEvents(np.array(times), np.array(sizes), Label.PROBE, {"kind": "trace",
                                                                        "path": str(path)})


def save_trace(ev: PacketEvents, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "size_mb"])
        for t, s in zip(ev.times.tolist(), ev.sizes.tolist()):
            w.writerow([repr(t), repr(s)])


def cumulative_steps(times: np.ndarray, sizes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge equal timestamps and return (t, cumulative v) including the origin."""
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if times.size == 0:
        return np.zeros(1), np.zeros(1)
    uniq, inv = np.unique(times, return_inverse=True)
    vol = np.bincount(inv, weights=sizes)
    cum = np.cumsum(vol)
    if uniq[0] <= 0:
        # a packet completing at t = 0 is counted just after the origin
        uniq = uniq.copy()
        uniq[0] = max(uniq[0], 0.0) + 1e-9
        if uniq.size > 1 and uniq[1] <= uniq[0]:
            raise ValueError("packets too close to the origin to separate")
    return np.concatenate([[0.0], uniq]), np.concatenate([[0.0], cum])


def to_curve(ev: PacketEvents, extension: Extension = Extension.CLAMP,
             domain: float | None = None, fluid: bool | None = None) -> Curve:
    """Cumulative-bits curve of an event list.

    Packet lists become right-continuous staircases.  Fluid slot events
    (``meta['fluid']``) spread each slot's volume linearly over the slot.
    The observed domain defaults to the generator's duration when known.
    """
    if fluid is None:
        fluid = bool(ev.meta.get("fluid", False))
    if domain is None:
        last = float(ev.times[-1]) if len(ev) else 0.0
        domain = max(last, float(ev.meta.get("duration", 0.0)))
    if fluid:
        slot = float(ev.meta["slot"])
        if len(ev) == 0:
            return Curve([0.0], [0.0], Mode.LINEAR, Extension(extension), domain=domain)
        idx = np.rint(ev.times / slot).astype(int)
        n = int(idx.max())
        vol = np.zeros(n + 1)
        np.add.at(vol, idx, ev.sizes)
        t = np.arange(n + 1) * slot
        return Curve(t, np.cumsum(vol), Mode.LINEAR, Extension(extension),
                     final_rate=0.0 if Extension(extension) is Extension.FINAL_SLOPE else None,
                     domain=domain)
    t, v = cumulative_steps(ev.times, ev.sizes)
    ext = Extension(extension)
    return Curve(t, v, Mode.STEP, ext,
                 final_rate=0.0 if ext is Extension.FINAL_SLOPE else None, domain=domain)
