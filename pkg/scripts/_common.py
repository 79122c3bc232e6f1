"""Shared helpers for the experiment scripts: run a preset and tabulate medians."""
import argparse
import json
from pathlib import Path

from bwest.cli import apply_overrides, execute, load_preset, validate


def parser(doc: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--out", default="bwest-out", help="output root")
    ap.add_argument("--runs", type=int, help="override the number of runs")
    ap.add_argument("--jobs", type=int, default=4)
    return ap


def run_preset(name: str, out: str, runs=None, jobs: int = 4, overrides=(), rename=None) -> dict:
    raw = load_preset(name)
    if rename:
        raw = dict(raw, name=rename)
    ov = list(overrides) + ([f"runs={runs}"] if runs else [])
    path = execute(validate(apply_overrides(raw, ov)), Path(out), jobs)
    return json.loads((path / "summary.json").read_text())


def median(summary: dict, key: str) -> float:
    return summary["metrics"][key]["median"]


def table(rows, header) -> None:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for row in [header, *rows]:
        print("  ".join(str(x).rjust(w) for x, w in zip(row, widths)))
