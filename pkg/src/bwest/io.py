"""CSV formats for curves, Legendre samples, derivatives and probe records.

Curve CSV::

    # mode=linear extension=final_slope final_rate=25.0 domain=inf
    t_ms,v_mb
    0.0,0.0
    ...

Legendre CSV: ``# rate_limit=<r|inf>`` then ``r_mbps,value_mb`` rows.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .minplus import Curve, CurveError, Extension, LegendreFn, Mode


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(path) -> tuple[dict, list[list[str]]]:
    meta: dict = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            rows.append(next(csv.reader([line])))
    return meta, rows


def write_curve(c: Curve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = f"# mode={c.mode.value} extension={c.extension.value}"
    if c.extension is Extension.FINAL_SLOPE:
        head += f" final_rate={_fmt(c.final_rate)}"
    head += f" domain={_fmt(c.domain)}"
    with open(path, "w", newline="") as fh:
        fh.write(head + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ms", "v_mb"])
        for t, v in zip(c.t, c.v):
            w.writerow([_fmt(t), _fmt(v)])


def read_curve(path) -> Curve:
    meta, rows = _header(path)
    if not rows or rows[0] != ["t_ms", "v_mb"]:
        raise CurveError(f"{path}: expected header t_ms,v_mb")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise CurveError(f"{path}: malformed row") from exc
    mode = Mode(meta.get("mode", "linear"))
    ext = Extension(meta.get("extension", "final_slope"))
    rate = float(meta["final_rate"]) if "final_rate" in meta else None
    if ext is Extension.FINAL_SLOPE and rate is None:
        rate = 0.0
    domain = float(meta.get("domain", "inf"))
    return Curve(data[:, 0], data[:, 1], mode, ext, final_rate=rate, domain=domain)


def write_legendre(L: LegendreFn, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    limit = "inf" if L.rate_limit is None else _fmt(L.rate_limit)
    with open(path, "w", newline="") as fh:
        fh.write(f"# rate_limit={limit}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r_mbps", "value_mb"])
        for r, v in zip(L.rates, L.values):
            w.writerow([_fmt(r), _fmt(v)])


def read_legendre(path) -> LegendreFn:
    meta, rows = _header(path)
    if not rows or rows[0] != ["r_mbps", "value_mb"]:
        raise CurveError(f"{path}: expected header r_mbps,value_mb")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
    lim = meta.get("rate_limit", "inf")
    limit = None if lim == "inf" or math.isinf(float(lim)) else float(lim)
    return LegendreFn(data[:, 0], data[:, 1], limit)


def write_rows(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def export_record(rec, stem) -> None:
    """``<stem>_A.csv``, ``<stem>_D.csv`` and ``<stem>.json`` metadata."""
    stem = Path(stem)
    write_curve(rec.A, stem.with_name(stem.name + "_A.csv"))
    write_curve(rec.D, stem.with_name(stem.name + "_D.csv"))
    meta = {k: v for k, v in rec.meta.items() if _jsonable(v)}
    meta.update(dropped=rec.dropped, partial=rec.partial)
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except (TypeError, ValueError):
        return False
