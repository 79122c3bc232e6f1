"""Command-line experiment runner.

    bwest run <config.json> [--out DIR] [--seed N] [--jobs K] [--set key=value ...]
    bwest preset <name> [same options] [--links N]
    bwest list-presets

Configs are JSON objects ``{"version": 1, "name", "kind", "runs", "seed",
"params"}``; ``params`` is merged over the defaults of ``kind`` and unknown
keys are rejected.  Exit status: 0 ok, 2 config error, 3 simulation failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .experiments import RUNNERS

SCHEMA_VERSION = 1
log = logging.getLogger("bwest")

_FIFO_LINK = {"capacity_mbps": 50.0, "prop_delay_ms": 10.0, "scheduler": "fifo",
              "cross": {"dist": "cbr", "rate_mbps": 25.0, "pkt_bytes": 800}}
_SCAN = {"r_start_mbps": 4.0, "r_inc_mbps": 4.0, "r_limit_mbps": 60.0, "n_packets": 400,
         "pkt_bytes": 1472,
         "criterion": {"type": "backlog_convexity", "alpha_ms": 4.0, "window": 3, "refine": True},
         "bisect_steps": 0, "readd_delay": True, "rate_window_ms": [100.0, 200.0],
         "report_horizon_ms": 200.0}

DEFAULTS: dict[str, dict] = {
    "example1": {"dt_ms": 1.0, "bucket_mb": 0.75, "rate_mbps": 25.0, "server_rate_mbps": 100.0,
                 "latency_ms": 10.0, "q": 0.01, "loads": {"high": 0.09, "low": 0.19},
                 "burstiness": {"high": [1, 200.0], "med": [5, 40.0], "low": [25, 8.0]},
                 "horizons_ms": [1000.0, 10000.0], "t_out_ms": 100.0, "gap_window_ms": 50.0},
    "example2": {"dt_ms": 0.5, "capacities_mbps": [70.0, 50.0, 30.0], "schedulers": ["fifo", "drr"],
                 "prop_delay_ms": 20.0, "cross_pkt_bytes": 800, "trace_path": None,
                 "trace": {"n_sources": 1, "peak_mbps": 154.0, "p": 0.08, "q": 0.01,
                           "duration_ms": 2000.0, "pkt_bytes": 1472},
                 "t_out_ms": 300.0, "rate_window_ms": [150.0, 300.0]},
    "ratescan": dict(_SCAN, links=[_FIFO_LINK],
                     reference={"rate_mbps": 25.0, "latency_ms": 10.0}),
    "chirp": {"links": [_FIFO_LINK], "r_start_mbps": 4.0, "r_max_mbps": 100.0, "gamma": 1.05,
              "pkt_bytes": 1472, "persistence": 5, "use_stop": True,
              "rate_window_ms": [100.0, 200.0], "report_horizon_ms": 200.0,
              "reference": {"rate_mbps": 25.0, "latency_ms": 10.0}},
    "crosstraffic": dict(_SCAN, links=[_FIFO_LINK], dists=["cbr", "exponential", "pareto"],
                         reference={"rate_mbps": 25.0, "latency_ms": 10.0}),
    "tandem": dict({k: v for k, v in _SCAN.items() if k not in ("readd_delay", "bisect_steps")},
                   n_links=2,
                   link={"capacity_mbps": 50.0, "prop_delay_ms": 10.0, "scheduler": "fifo",
                         "cross": {"dist": "exponential", "rate_mbps": 25.0, "pkt_bytes": 800}},
                   reference={"rate_mbps": 25.0, "latency_per_link_ms": 10.0}),
    "fluid": {"a": 0.4, "dt_ms": 0.1, "t_max_ms": 500.0, "scan_increments_mbps": [10.0, 5.0],
              "scan_limit_mbps": 80.0, "chirp_gammas": [1.2, 1.1, 1.05],
              "chirp_start_mbps": 10.0, "chirp_max_mbps": 200.0, "chirp_pkt_bytes": 1200,
              "gap_window_ms": 50.0},
    "scenario": {"links": [_FIFO_LINK], "probe": {"kind": "cbr", "rate_mbps": 20.0, "n_packets": 400},
                 "until_ms": None, "estimator": "passive", "dt_ms": 0.5, "t_out_ms": 200.0,
                 "rate_window_ms": [100.0, 200.0]},
}

# params whose values are free-form structures (not checked key by key)
_OPAQUE = {"links", "link", "probe", "criterion", "loads", "burstiness", "trace", "reference"}


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


# -- config handling --------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return raw


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """``key=value`` with dotted keys; keys not starting with a top-level field go under params."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] not in ("version", "name", "kind", "runs", "seed", "params"):
            parts = ["params"] + parts
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _coerce(value)
    return cfg


def validate(cfg: dict) -> dict:
    """Check the schema and return the config with defaults filled in."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - {"version", "name", "kind", "runs", "seed", "params", "description"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}; expected {SCHEMA_VERSION}")
    kind = cfg.get("kind")
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {sorted(DEFAULTS)}")
    runs = cfg.get("runs", 20)
    seed = cfg.get("seed", 0)
    if not isinstance(runs, int) or isinstance(runs, bool) or runs < 1:
        raise ConfigError("runs must be a positive integer")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    defaults = DEFAULTS[kind]
    bad = set(params) - set(defaults)
    if bad:
        raise ConfigError(f"unknown params for {kind}: {sorted(bad)}")
    merged = copy.deepcopy(defaults)
    for k, v in params.items():
        d = defaults[k]
        if k not in _OPAQUE and d is not None and v is not None:
            if isinstance(d, bool) != isinstance(v, bool) or (
                    isinstance(d, (int, float)) and not isinstance(v, (int, float))) or (
                    isinstance(d, (str, list, dict)) and not isinstance(v, type(d))):
                raise ConfigError(f"param {k!r} should be {type(d).__name__}, got {type(v).__name__}")
        merged[k] = v
    return {"version": SCHEMA_VERSION, "name": cfg.get("name", kind), "kind": kind,
            "runs": runs, "seed": seed, "params": merged}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


# -- execution ---------------------------------------------------------------------------

def _one_run(kind: str, params: dict, seed: int, out: str) -> dict:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return RUNNERS[kind](params, seed, d)


def _aggregate(per_run: list[dict]) -> dict:
    keys = sorted({k for m in per_run for k in m})
    agg = {}
    for k in keys:
        vals = np.array([m[k] for m in per_run if k in m], dtype=float)
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            agg[k] = {"mean": None, "n": 0}
            continue
        agg[k] = {"mean": float(finite.mean()), "std": float(finite.std()),
                  "p5": float(np.percentile(finite, 5)), "p95": float(np.percentile(finite, 95)),
                  "median": float(np.median(finite)), "n": int(finite.size)}
    return agg


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def execute(cfg: dict, out_root: Path, jobs: int = 1) -> Path:
    """Run every seed of a validated config; returns the output directory.

    ``summary.json`` holds only deterministic content; wall-clock time goes
    to ``timing.json``.
    """
    out = Path(out_root) / cfg["name"]
    out.mkdir(parents=True, exist_ok=True)
    seeds = [run_seed(cfg["seed"], i) for i in range(cfg["runs"])]
    dirs = [str(out / f"run_{i:03d}") for i in range(cfg["runs"])]
    t0 = time.perf_counter()
    try:
        if jobs > 1 and cfg["runs"] > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futs = [pool.submit(_one_run, cfg["kind"], cfg["params"], s, d)
                        for s, d in zip(seeds, dirs)]
                per_run = [f.result() for f in futs]
        else:
            per_run = [_one_run(cfg["kind"], cfg["params"], s, d) for s, d in zip(seeds, dirs)]
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        raise SimulationError(str(exc)) from exc
    elapsed = time.perf_counter() - t0
    summary = {"name": cfg["name"], "kind": cfg["kind"], "config_hash": config_hash(cfg),
               "seed": cfg["seed"], "run_seeds": seeds, "runs": cfg["runs"],
               "config": cfg, "metrics": _aggregate(per_run), "per_run": per_run}
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"runtime_s": elapsed, "jobs": jobs}) + "\n")
    return out


# -- presets -----------------------------------------------------------------------------

def preset_names() -> list[str]:
    files = resources.files("bwest") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("bwest") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; see `bwest list-presets`")
    return json.loads(path.read_text())


# -- entry point -------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bwest", description="min-plus bandwidth estimation experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--out", help="output root (default $BWEST_OUT or ./bwest-out)")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--runs", type=int, help="number of runs")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted keys go under params)")
        p.add_argument("-v", "--verbose", action="store_true")

    p_run = sub.add_parser("run", help="run a config file")
    p_run.add_argument("config")
    common(p_run)
    p_pre = sub.add_parser("preset", help="run a bundled preset")
    p_pre.add_argument("name")
    p_pre.add_argument("--links", type=int, help="number of bottleneck links (tandem presets)")
    common(p_pre)
    sub.add_parser("list-presets", help="list bundled presets")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.cmd == "list-presets":
        for name in preset_names():
            print(f"{name:20s} {load_preset(name).get('description', '')}")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        raw = load_config(args.config) if args.cmd == "run" else load_preset(args.name)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.runs is not None:
            overrides.append(f"runs={args.runs}")
        if getattr(args, "links", None) is not None:
            if raw.get("kind") != "tandem":
                raise ConfigError("--links applies to tandem presets only")
            overrides.append(f"n_links={args.links}")
            raw = dict(raw, name=f"{raw.get('name', 'tandem')}-{args.links}links")
        cfg = validate(apply_overrides(raw, overrides))
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_root = Path(args.out or os.environ.get("BWEST_OUT", "bwest-out"))
    try:
        out = execute(cfg, out_root, args.jobs)
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
