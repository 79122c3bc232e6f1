import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwest.minplus import (Curve, CurveError, Extension, GridConfig, constant_rate, convolve,
                           legendre, quadratic, rate_latency)
from bwest.netsim import CrossSpec, FluidProber, LinkSpec, PathProber, ProbeRecord
from bwest.estimator import (BacklogConvexity, Decision, Method, NonLinearity, ScanState,
                             available_bandwidth_oracle, backlog_convexity_criterion,
                             bmax_estimate, chirp_estimate, chirp_stop_rate, consistency_gap,
                             export_estimate, fifo_theoretical_bmax, hull_gap,
                             nonlinearity_criterion, passive_estimate, rate_scan)
from bwest.traffic import (PROBE_PKT, ChirpParams, OnOffParams, bytes_to_mb, cbr_train,
                           onoff_trace, rate_chirp, renewal_cross, to_curve)

from oracles import random_convex, random_pl, random_staircase

GRID = GridConfig(dt=0.5, t_max=200)
EPS = 1e-6
empty = np.empty(0)


def fluid_record(A, D, meta=None):
    return ProbeRecord(A, D, empty, empty, empty, meta=meta or {})


class TestPassive:
    def test_constant_rate_identity(self):
        c = constant_rate(25).replace(domain=100)
        est = passive_estimate(fluid_record(c, c), GRID)
        ts = np.linspace(0, 100, 11)
        np.testing.assert_allclose(est.curve(ts), 25e-3 * ts, atol=1e-12)
        assert est.method is Method.PASSIVE

    def test_empty_record(self):
        z = Curve([0.0], [0.0], extension=Extension.CLAMP, domain=10)
        with pytest.raises(CurveError):
            passive_estimate(fluid_record(z, z), GRID)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reconstruction_and_conservative(self, seed):
        rng = np.random.default_rng(seed)
        A = random_pl(rng).replace(domain=60)
        S = random_pl(rng)
        D = convolve(A, S, GRID, 60).replace(domain=60)
        est = passive_estimate(fluid_record(A, D), GRID)
        T = GRID.times(60)
        np.testing.assert_allclose(convolve(A, est.curve, GRID, 60)(T), D(T), atol=EPS)
        assert np.all(est.curve(T) <= S(T) + EPS)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_longer_window_never_worse(self, seed):
        rng = np.random.default_rng(seed)
        A = random_staircase(rng, t_span=40).replace(domain=100)
        D = convolve(A, random_convex(rng), GRID, 100).replace(domain=100)
        rec = fluid_record(A, D)
        short = passive_estimate(rec, GRID, horizon=50, t_out=40)
        long = passive_estimate(rec, GRID, horizon=100, t_out=40)
        T = GRID.times(40)
        assert np.all(long.curve(T) >= short.curve(T) - EPS)

    def test_back_to_back_train_converges(self):
        S = rate_latency(25, 10)
        g = GridConfig(dt=0.1, t_max=300)
        ts = np.linspace(0, 100, 101)
        gaps = []
        for n in (5, 20, 80):
            rec = FluidProber(S, g, fluid=False, horizon=300)(cbr_train(1000, n))
            gaps.append(np.max(S(ts) - passive_estimate(rec, g, t_out=100).curve(ts)))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_known_delay_removed(self):
        link = LinkSpec(50, prop_delay=20)
        rec = PathProber([link], seed=1, warmup=0)(cbr_train(20, 50))
        g = GridConfig(dt=0.1, t_max=400)
        raw = passive_estimate(rec, g, t_out=40)
        shifted = passive_estimate(rec, g, t_out=40, delay=None)
        assert raw.curve(20) == 0.0
        assert shifted.curve(20) > 0.3


class TestRateScanFluid:
    def test_quadratic_backlog_samples(self):
        prober = FluidProber(quadratic(0.4), GridConfig(dt=0.1, t_max=500))
        est, state = rate_scan(prober, 10, 10, 80)
        np.testing.assert_allclose(state.bmax, state.rates ** 2 / 1600, rtol=0.01)
        assert est.curve.is_convex()
        assert est.method is Method.RATE_SCAN

    def test_linear_regime_only(self):
        # r_limit below C - r_c on FIFO: no backlog, S~ = r_limit * t
        link = LinkSpec(50, cross=CrossSpec("cbr", 25))
        est, state = rate_scan(PathProber([link], seed=2), 4, 4, 20, n_packets=100)
        assert np.all(state.bmax <= 2 * PROBE_PKT)
        assert est.curve.final_rate == pytest.approx(20)

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            rate_scan(lambda p: None, 0, 4, 20)

    def test_bisection_refines_inside_bracket(self):
        link = LinkSpec(50, cross=CrossSpec("cbr", 25))
        _, plain = rate_scan(PathProber([link], seed=3), 4, 4, 60, criterion=BacklogConvexity())
        _, bis = rate_scan(PathProber([link], seed=3), 4, 4, 60, criterion=BacklogConvexity(),
                           bisect_steps=2)
        assert np.all(np.diff(bis.rates) > 0)
        assert len(bis.records) == len(bis.samples)
        assert plain.stopped_at - 4 <= bis.stopped_at <= plain.stopped_at + 4


class TestBacklogConvexity:
    def _state(self, rates, bmax, **kw):
        st_ = ScanState(**kw)
        decision = None
        for r, b in zip(rates, bmax):
            st_.samples.append((r, b))
            decision = backlog_convexity_criterion(st_)
            if decision is Decision.STOP:
                break
        return st_, decision

    def test_zero_backlog_continues(self):
        state, d = self._state([4, 8, 12, 16], [0, 0, 0, 0])
        assert d is Decision.CONTINUE
        assert all(abs(x) < 1e-12 for _, x in state.delta_b)

    def test_single_outlier_filtered(self):
        r = np.arange(10, 90, 10.0)
        b = r ** 2 / 1600
        b[3] += 1.0   # one spike
        state, d = self._state(r, b)
        assert d is Decision.CONTINUE
        assert max(x for _, x in state.delta_b) > state.alpha   # raw value did exceed alpha

    def test_fluid_fifo_concave_branch_stops(self):
        rates = np.arange(4, 64, 4.0)
        b = [fifo_theoretical_bmax(4.0, 50, 25, r) for r in rates]
        state, d = self._state(rates, b)
        assert d is Decision.STOP
        assert 25 - 4 <= state.stopped_at <= 25 + 4

    def test_delta_b_nonnegative(self):
        rng = np.random.default_rng(0)
        r = np.arange(4, 64, 4.0)
        state, _ = self._state(r, np.sort(rng.random(r.size)), alpha=1e9)
        assert min(x for _, x in state.delta_b) >= -EPS

    def test_hull_gap(self):
        np.testing.assert_allclose(hull_gap([1, 2, 3], [0, 1, 0]), [0, 1, 0])
        np.testing.assert_allclose(hull_gap([1, 2], [0, 5]), [0, 0])


class TestNonLinearity:
    link = LinkSpec(50, cross=CrossSpec("cbr", 25))

    def _records(self, rates, seed=1):
        prober = PathProber([self.link], seed=seed)
        recs = [prober(cbr_train(r, 200)) for r in rates]
        from bwest.estimator import _measure
        samples = [(r, _measure(rec)[0]) for r, rec in zip(rates, recs)]
        ests = [bmax_estimate(samples[: k + 1]) for k in range(len(rates))]
        return recs, ests

    def test_linear_regime_none(self):
        recs, ests = self._records([4, 8, 12, 16, 20])
        assert nonlinearity_criterion(recs, ests) is None

    def test_single_probe_none(self):
        recs, ests = self._records([30])
        assert nonlinearity_criterion(recs, ests) is None

    def test_crossing_detected_after_boundary(self):
        rates = list(range(4, 64, 4))
        recs, ests = self._records(rates)
        k = nonlinearity_criterion(recs, ests)
        assert k is not None and rates[k] >= 25 - 4

    def test_scan_with_criterion(self):
        _, state = rate_scan(PathProber([self.link], seed=4), 4, 4, 60, criterion=NonLinearity())
        assert state.reason == "nonlinearity" and state.detected_at >= 21

    def test_consistency_gap_exact_at_left_limits(self):
        A = Curve([0, 1, 2], [0, 1.0, 2.0], mode="step", extension="clamp", domain=10)
        D = Curve([0, 3, 4], [0, 1.0, 2.0], mode="step", extension="clamp", domain=10)
        rec = fluid_record(A, D)
        # A * constant_rate(1000) just before t = 3 is 2.0 while D is still 0
        assert consistency_gap(rec, constant_rate(1000)) == pytest.approx(2.0)
        assert consistency_gap(rec, rate_latency(1000, 2)) <= 1e-9


class TestChirp:
    def _fluid_chirp(self, S, gamma=1.05):
        ev = rate_chirp(ChirpParams(10, 200, gamma, bytes_to_mb(1200)))
        t = np.concatenate([[0.0], ev.times])
        v = np.concatenate([[0.0], np.cumsum(ev.sizes)])
        A = Curve(t, v, extension=Extension.PLUS_INFINITY)
        D = convolve(A.replace(extension=Extension.FINAL_SLOPE, final_rate=ev.meta["rates"][-1]), S)
        return fluid_record(A, D, dict(ev.meta)), np.asarray(ev.meta["rates"])

    def test_idealized_fluid_recovers_conjugate(self):
        S = quadratic(0.4)
        rec, rates = self._fluid_chirp(S)
        est = chirp_estimate(rec)
        inner = rates[:-1]   # the top rate sees the final-slope tail
        np.testing.assert_allclose(legendre(est.curve, inner).values, legendre(S, inner).values,
                                   atol=EPS)
        ts = np.linspace(0, 100, 201)
        assert np.all(est.curve(ts) <= S(ts) + EPS)
        assert est.curve.is_convex()

    def test_unloaded_link_lower_bound(self):
        link = LinkSpec(10_000)
        rec = PathProber([link], seed=0)(rate_chirp(ChirpParams(4, 100, 1.05)))
        est = chirp_estimate(rec)
        ts = np.linspace(0, 50, 101)
        assert np.all(est.curve(ts) <= rate_latency(10_000, 0.01)(ts) + EPS)
        assert est.method is Method.CHIRP

    def test_degenerate(self):
        A = Curve([0, 1, 2], [0, 0.1, 0.2], mode="step", extension="clamp")
        with pytest.raises(CurveError):
            chirp_estimate(fluid_record(A, A, {"rates": [10, 20]}))

    def test_stop_heuristic_near_available_bandwidth(self):
        link = LinkSpec(50, cross=CrossSpec("cbr", 25))
        stops = [chirp_stop_rate(PathProber([link], seed=s)(rate_chirp(ChirpParams(4, 100, 1.05))))
                 for s in range(5)]
        assert all(20 <= s <= 40 for s in stops)

    def test_stop_rate_caps_rates(self):
        S = quadratic(0.4)
        rec, _ = self._fluid_chirp(S)
        est = chirp_estimate(rec, stop_rate=50)
        assert est.provenance["stop_rate"] == 50
        assert est.curve.final_rate <= 50 + 1e-9


class TestOracles:
    @pytest.mark.parametrize("L,r,expected", [(4, 25, 0.0), (4, 35, 4 * (1 - 50 / 60))])
    def test_fifo_bmax(self, L, r, expected):
        assert fifo_theoretical_bmax(L, 50, 25, r) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(26, 1e4), st.floats(1, 1e3))
    def test_fifo_bmax_monotone_below_L(self, r, dr):
        a = fifo_theoretical_bmax(4, 50, 25, r)
        b = fifo_theoretical_bmax(4, 50, 25, r + dr)
        assert a <= b < 4

    def test_available_bandwidth(self):
        zero = Curve([0.0], [0.0], extension=Extension.CLAMP)
        assert available_bandwidth_oracle(50, zero, 0, 100) == (50.0, False)
        rate, sat = available_bandwidth_oracle(50, constant_rate(25), 10, 100)
        assert rate == pytest.approx(25) and not sat
        cbr = to_curve(renewal_cross("cbr", 25, duration=2000, seed=0))
        assert available_bandwidth_oracle(50, cbr, 100, 1000)[0] == pytest.approx(25, rel=0.01)
        assert available_bandwidth_oracle(50, constant_rate(60), 0, 10) == (0.0, True)

    def test_available_bandwidth_onoff(self):
        ev = onoff_trace(OnOffParams(1, 200, 0.09, 0.01, duration=100_000, seed=3))
        rate, _ = available_bandwidth_oracle(50, to_curve(ev), 0, 100_000)
        assert rate == pytest.approx(30, rel=0.05)


def test_export_sidecar(tmp_path):
    prober = FluidProber(quadratic(0.4), GridConfig(dt=0.5, t_max=500))
    est, state = rate_scan(prober, 10, 10, 40)
    export_estimate(est, tmp_path / "scan.csv", state)
    side = json.loads((tmp_path / "scan.json").read_text())
    assert side["method"] == "rate_scan"
    assert [row["r_mbps"] for row in side["criterion_trace"]] == [10, 20, 30, 40]
    assert (tmp_path / "scan.csv").read_text().startswith("# mode=linear")
