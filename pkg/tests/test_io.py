import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwest.io import export_record, read_curve, read_legendre, write_curve, write_legendre
from bwest.minplus import Curve, CurveError, Extension, LegendreFn, Mode, rate_latency
from bwest.netsim import LinkSpec, simulate_link
from bwest.traffic import cbr_train

from oracles import random_pl


@pytest.mark.parametrize("curve", [
    rate_latency(25, 10),
    Curve([0, 1, 2], [0, 0.1, 0.3], mode=Mode.STEP, extension=Extension.CLAMP, domain=5.0),
    Curve([0, 4], [0, 0.2], extension=Extension.PLUS_INFINITY),
])
def test_curve_roundtrip(tmp_path, curve):
    write_curve(curve, tmp_path / "c.csv")
    back = read_curve(tmp_path / "c.csv")
    assert back.mode is curve.mode and back.extension is curve.extension
    assert back.domain == curve.domain and back.tail == curve.tail
    np.testing.assert_array_equal(back.t, curve.t)
    np.testing.assert_array_equal(back.v, curve.v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_curve_roundtrip_bit_exact(seed):
    import tempfile
    from pathlib import Path

    c = random_pl(np.random.default_rng(seed))
    with tempfile.TemporaryDirectory() as d:
        write_curve(c, Path(d) / "c.csv")
        back = read_curve(Path(d) / "c.csv")
    np.testing.assert_array_equal(back.v, c.v)
    assert back.final_rate == c.final_rate


def test_bad_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n0,0\n")
    with pytest.raises(CurveError):
        read_curve(p)


def test_legendre_roundtrip(tmp_path):
    for limit in (None, 40.0):
        L = LegendreFn([0, 10, 40], [0, 0.1, 0.7], limit)
        write_legendre(L, tmp_path / "l.csv")
        back = read_legendre(tmp_path / "l.csv")
        np.testing.assert_array_equal(back.values, L.values)
        assert back.rate_limit == limit


def test_export_record(tmp_path):
    rec = simulate_link(cbr_train(20, 10), LinkSpec(50, prop_delay=5))
    export_record(rec, tmp_path / "probe")
    A = read_curve(tmp_path / "probe_A.csv")
    D = read_curve(tmp_path / "probe_D.csv")
    meta = json.loads((tmp_path / "probe.json").read_text())
    assert A.v[-1] == pytest.approx(D.v[-1])
    assert meta["prop_delay"] == 5 and meta["dropped"] == 0
