"""Experiment runners behind the CLI presets.

Each runner takes the resolved ``params`` dict, a per-run seed and an output
directory, writes its CSV artifacts there and returns a flat dict of
metrics.  Runners are module-level functions so they can be shipped to
worker processes.
"""
from __future__ import annotations

from pathlib import Path


from .composer import compose, derivative, write_derivative
from .estimator import (BacklogConvexity, Estimate, NonLinearity, chirp_estimate,
                        chirp_stop_rate, export_estimate, passive_estimate, rate_scan)
from .io import export_record, write_curve
from .minplus import (Curve, GridConfig, burst, convolve, quadratic, rate_latency, sup_gap,
                      token_bucket)
from .netsim import CrossSpec, FluidProber, LinkSpec, PathProber, simulate_path
from .traffic import (ChirpParams, OnOffParams, PROBE_PKT, bytes_to_mb, load_trace, onoff_trace,
                      rate_chirp, to_curve)

# -- shared helpers ------------------------------------------------------------------

def make_links(specs: list[dict]) -> list[LinkSpec]:
    links = []
    for s in specs:
        cross = s.get("cross") or {}
        cs = None
        if cross and cross.get("dist", "none") != "none":
            cs = CrossSpec(dist=cross["dist"], rate=float(cross.get("rate_mbps", 0.0)),
                           pkt_size=bytes_to_mb(cross.get("pkt_bytes", 800)),
                           shape=float(cross.get("shape", 1.5)), onoff=cross.get("onoff"))
        links.append(LinkSpec(capacity=float(s["capacity_mbps"]),
                              prop_delay=float(s.get("prop_delay_ms", 0.0)),
                              scheduler=s.get("scheduler", "fifo"),
                              quantum=float(s.get("quantum_mb", bytes_to_mb(800))),
                              cross=cs, buffer=s.get("buffer_mb")))
    return links


def criterion_from(spec: dict | None):
    if not spec or spec.get("type", "none") == "none":
        return None
    if spec["type"] == "backlog_convexity":
        return BacklogConvexity(alpha=float(spec.get("alpha_ms", 4.0)),
                                window=int(spec.get("window", 3)),
                                refine=bool(spec.get("refine", True)))
    if spec["type"] == "nonlinearity":
        return NonLinearity(eps_b=float(spec.get("eps_mb", PROBE_PKT)))
    raise ValueError(f"unknown criterion {spec['type']!r}")


def delayed(c: Curve, d: float) -> Curve:
    """c shifted right by d ms (convolution with a delayed burst)."""
    return c if d <= 0 else convolve(c, burst(d))


def slope(c: Curve, window) -> float:
    t0, t1 = window
    return float((c(t1) - c(t0)) / ((t1 - t0) * 1e-3))


def _emit(curve: Curve, out: Path, stem: str, grid: GridConfig, horizon: float) -> None:
    write_curve(curve, out / f"{stem}.csv")
    t, r = derivative(curve, grid, horizon)
    write_derivative(out / f"{stem}_rate.csv", t, r)


REPORT_GRID = GridConfig(dt=1.0, t_max=1000.0)


# -- Example 1: passive estimation of On-Off traffic ----------------------------------

def run_example1(p: dict, seed: int, out: Path) -> dict:
    g = GridConfig(dt=p["dt_ms"], t_max=max(p["horizons_ms"]))
    S = convolve(token_bucket(p["bucket_mb"], p["rate_mbps"]),
                 rate_latency(p["server_rate_mbps"], p["latency_ms"]), g, p["t_out_ms"])
    metrics = {}
    for load, pp in p["loads"].items():
        for level, (n, peak) in p["burstiness"].items():
            for H in p["horizons_ms"]:
                ev = onoff_trace(OnOffParams(n, peak, pp, p["q"], slot=1.0, duration=H, seed=seed))
                A = to_curve(ev, domain=H)
                D = convolve(A, S, g, H)
                est = passive_estimate_curves(A, D, H, g, p["t_out_ms"])
                key = f"{load}_{level}_{int(H)}ms"
                write_curve(est, out / f"estimate_{key}.csv")
                metrics[f"gap_{key}"] = sup_gap(S, est, p["gap_window_ms"], g)
    write_curve(S, out / "reference.csv")
    return metrics


def passive_estimate_curves(A: Curve, D: Curve, horizon: float, grid: GridConfig,
                            t_out: float) -> Curve:
    from .minplus import deconvolve

    return deconvolve(D, A, horizon, grid, t_out)


# -- Example 2: passive estimation of a bursty trace at FIFO/DRR links ----------------

def _example2_trace(p: dict, seed: int):
    if p.get("trace_path"):
        return load_trace(p["trace_path"])
    tr = p["trace"]
    return onoff_trace(OnOffParams(tr["n_sources"], tr["peak_mbps"], tr["p"], tr["q"],
                                   duration=tr["duration_ms"], seed=seed),
                       pkt_size=bytes_to_mb(tr["pkt_bytes"]))


def run_example2(p: dict, seed: int, out: Path) -> dict:
    g = GridConfig(dt=p["dt_ms"], t_max=p["t_out_ms"])
    ev = _example2_trace(p, seed)
    metrics = {"trace_mean_mbps": ev.volume / (ev.times[-1] * 1e-3)}
    for C in p["capacities_mbps"]:
        ref = rate_latency(C / 2, p["prop_delay_ms"])
        for sch in p["schedulers"]:
            link = LinkSpec(C, p["prop_delay_ms"], scheduler=sch,
                            cross=CrossSpec("cbr", C / 2, bytes_to_mb(p["cross_pkt_bytes"])))
            rec = simulate_path(ev, [link], seed=seed)[-1]
            est = passive_estimate(rec, GridConfig(dt=p["dt_ms"], t_max=rec.D.domain),
                                   t_out=p["t_out_ms"])
            key = f"C{int(C)}_{sch}"
            _emit(est.curve, out, f"estimate_{key}", g, p["t_out_ms"])
            metrics[f"rate_{key}"] = slope(est.curve, p["rate_window_ms"])
            metrics[f"gap_{key}"] = sup_gap(ref, est.curve, p["t_out_ms"], g)
    return metrics


# -- Experiment 1/2: rate scan and chirp over a simulated path ------------------------

def run_ratescan(p: dict, seed: int, out: Path) -> dict:
    links = make_links(p["links"])
    prober = PathProber(links, seed=seed)
    est, state = rate_scan(prober, p["r_start_mbps"], p["r_inc_mbps"], p["r_limit_mbps"],
                           p["n_packets"], bytes_to_mb(p["pkt_bytes"]),
                           criterion_from(p.get("criterion")), p.get("bisect_steps", 0))
    curve = delayed(est.curve, prober.prop_delay) if p.get("readd_delay", True) else est.curve
    est = Estimate(curve, est.method, est.provenance)
    export_estimate(est, out / "estimate.csv", state)
    t, r = derivative(curve, REPORT_GRID, p["report_horizon_ms"])
    write_derivative(out / "estimate_rate.csv", t, r)
    ref = rate_latency(p["reference"]["rate_mbps"], p["reference"]["latency_ms"])
    return {"stop_rate": state.stopped_at if state.stopped_at is not None else float("nan"),
            "long_run_rate": slope(curve, p["rate_window_ms"]),
            "sup_gap": sup_gap(ref, curve, p["report_horizon_ms"], REPORT_GRID),
            "n_trains": len(state.samples)}


def run_chirp(p: dict, seed: int, out: Path) -> dict:
    links = make_links(p["links"])
    prober = PathProber(links, seed=seed)
    cp = ChirpParams(p["r_start_mbps"], p["r_max_mbps"], p["gamma"], bytes_to_mb(p["pkt_bytes"]))
    rec = prober(rate_chirp(cp))
    stop = chirp_stop_rate(rec, p["persistence"]) if p.get("use_stop", True) else None
    est = chirp_estimate(rec, stop_rate=stop)
    curve = delayed(est.curve, prober.prop_delay)
    export_estimate(Estimate(curve, est.method, est.provenance), out / "estimate.csv")
    t, r = derivative(curve, REPORT_GRID, p["report_horizon_ms"])
    write_derivative(out / "estimate_rate.csv", t, r)
    ref = rate_latency(p["reference"]["rate_mbps"], p["reference"]["latency_ms"])
    return {"stop_rate": stop if stop is not None else float("nan"),
            "long_run_rate": slope(curve, p["rate_window_ms"]),
            "sup_gap": sup_gap(ref, curve, p["report_horizon_ms"], REPORT_GRID),
            "n_packets": int(rec.A.t.size - 1)}


def run_crosstraffic(p: dict, seed: int, out: Path) -> dict:
    metrics = {}
    for dist in p["dists"]:
        q = dict(p)
        q["links"] = [dict(l, cross=dict(l["cross"], dist=dist)) for l in p["links"]]
        sub = out / dist
        for k, v in run_ratescan(q, seed, sub).items():
            metrics[f"{k}_{dist}"] = v
    return metrics


# -- Experiment 3: tandem, E2E probing vs per-link convolution ------------------------

def run_tandem(p: dict, seed: int, out: Path) -> dict:
    n = int(p["n_links"])
    links = make_links([p["link"]] * n)
    crit = criterion_from(p.get("criterion"))
    args = (p["r_start_mbps"], p["r_inc_mbps"], p["r_limit_mbps"], p["n_packets"],
            bytes_to_mb(p["pkt_bytes"]), crit)
    e2e_prober = PathProber(links, seed=seed)
    e2e, st = rate_scan(e2e_prober, *args)
    e2e_curve = delayed(e2e.curve, e2e_prober.prop_delay)
    per = []
    for k, link in enumerate(links):
        pr = PathProber([link], seed=seed * 101 + k + 1)
        est, _ = rate_scan(pr, *args)
        per.append(delayed(est.curve, pr.prop_delay))
    conv_curve = compose(per)
    H = p["report_horizon_ms"]
    _emit(e2e_curve, out, "e2e", REPORT_GRID, H)
    _emit(conv_curve, out, "convolution", REPORT_GRID, H)
    ref = rate_latency(p["reference"]["rate_mbps"], p["reference"]["latency_per_link_ms"] * n)
    return {"e2e_rate": slope(e2e_curve, p["rate_window_ms"]),
            "conv_rate": slope(conv_curve, p["rate_window_ms"]),
            "e2e_stop": st.stopped_at if st.stopped_at is not None else float("nan"),
            "e2e_gap": sup_gap(ref, e2e_curve, H, REPORT_GRID),
            "conv_gap": sup_gap(ref, conv_curve, H, REPORT_GRID)}


# -- Fluid demos: rate scan and chirp on S(t) = 0.4 t^2 --------------------------------

def run_fluid(p: dict, seed: int, out: Path) -> dict:
    g = GridConfig(dt=p["dt_ms"], t_max=p["t_max_ms"])
    S = quadratic(p["a"], g)
    metrics = {}
    for inc in p["scan_increments_mbps"]:
        est, state = rate_scan(FluidProber(S, g), inc, inc, p["scan_limit_mbps"])
        write_curve(est.curve, out / f"ratescan_inc{inc:g}.csv")
        metrics[f"scan_gap_inc{inc:g}"] = sup_gap(S, est.curve, p["gap_window_ms"], g)
        metrics[f"scan_bmax_err_inc{inc:g}"] = max(abs(b - r * r / (4 * p["a"] * 1e3))
                                                   for r, b in state.samples)
    for gamma in p["chirp_gammas"]:
        cp = ChirpParams(p["chirp_start_mbps"], p["chirp_max_mbps"], gamma,
                         bytes_to_mb(p["chirp_pkt_bytes"]))
        rec = FluidProber(S, g, fluid=False)(rate_chirp(cp))
        est = chirp_estimate(rec)
        write_curve(est.curve, out / f"chirp_gamma{gamma:g}.csv")
        metrics[f"chirp_gap_gamma{gamma:g}"] = sup_gap(S, est.curve, p["gap_window_ms"], g)
    write_curve(S, out / "reference.csv")
    return metrics


# -- generic scenario -------------------------------------------------------------------

def run_scenario(p: dict, seed: int, out: Path) -> dict:
    from .traffic import cbr_train

    links = make_links(p["links"])
    pr = p["probe"]
    kind = pr.get("kind", "cbr")
    if kind == "cbr":
        ev = cbr_train(pr["rate_mbps"], pr["n_packets"], bytes_to_mb(pr.get("pkt_bytes", 1472)))
    elif kind == "chirp":
        ev = rate_chirp(ChirpParams(pr["r_start_mbps"], pr["r_max_mbps"], pr["gamma"],
                                    bytes_to_mb(pr.get("pkt_bytes", 1472))))
    elif kind == "trace":
        ev = load_trace(pr["path"])
    elif kind == "onoff":
        ev = onoff_trace(OnOffParams(pr["n_sources"], pr["peak_mbps"], pr["p"], pr["q"],
                                     duration=pr["duration_ms"], seed=seed),
                         pkt_size=bytes_to_mb(pr.get("pkt_bytes", 1472)))
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    until = p.get("until_ms")
    rec = simulate_path(ev, links, until=until, seed=seed)[-1]
    export_record(rec, out / "record")
    method = p.get("estimator", "passive")
    if method == "passive":
        grid = GridConfig(dt=p.get("dt_ms", 0.5), t_max=max(rec.D.domain, 1.0))
        est = passive_estimate(rec, grid, t_out=p.get("t_out_ms", 200.0), delay=None)
    elif method == "chirp":
        est = chirp_estimate(rec)
    else:
        raise ValueError(f"unknown estimator {method!r}")
    export_estimate(est, out / "estimate.csv")
    return {"long_run_rate": slope(est.curve, p.get("rate_window_ms", [100.0, 200.0])),
            "dropped": rec.dropped, "partial": float(rec.partial)}


RUNNERS = {
    "example1": run_example1,
    "example2": run_example2,
    "ratescan": run_ratescan,
    "chirp": run_chirp,
    "crosstraffic": run_crosstraffic,
    "tandem": run_tandem,
    "fluid": run_fluid,
    "scenario": run_scenario,
}
