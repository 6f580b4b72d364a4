"""
Tests for the download model, throughput meter, catalogs, session
configuration and the session engine.
"""

import math

import numpy as np
import pytest

from lowdelay_abr.streaming.engine import (
    MediaCatalog,
    SessionEngine,
    SimConfig,
    ThroughputMeter,
    Timeline,
    buffer_level,
    build_synthetic_catalog,
    load_catalog,
    measure_throughput,
    run_session,
    simulate_download,
)
from lowdelay_abr.streaming.traces import ThroughputTrace, bursty_trace, constant_trace

MBPS = 1e6


def _run(trace, config):
    return run_session(trace, config.catalog(), config.timeline(), config)


class _DropAfterSkip:
    """Top representation until a download fails, then the second lowest."""

    name = "scripted"
    label = "scripted"
    uses_predictions = False

    def __init__(self):
        self.dropped = False

    def select(self, view):
        return 1 if self.dropped else len(view.rates) - 1

    def record(self, j, forced, throughput_bps):
        if throughput_bps is None and not forced:
            self.dropped = True


class TestSimulateDownload:
    """Test downloads over piecewise-constant rates."""

    def test_completes_within_first_second(self):
        trace = constant_trace("c", 10 * MBPS, 60)

        outcome = simulate_download(trace, 0.0, 5 * MBPS, 3.0)

        assert outcome.completed
        assert outcome.t_end == pytest.approx(0.5)
        assert outcome.bits_delivered == 5 * MBPS

    def test_crosses_rate_change(self):
        trace = ThroughputTrace("t", np.array([10 * MBPS, 2 * MBPS] + [1 * MBPS] * 58))

        outcome = simulate_download(trace, 0.0, 11 * MBPS, 3.0)

        assert outcome.completed
        assert outcome.t_end == pytest.approx(1.5)

    def test_severed_at_deadline(self):
        trace = constant_trace("c", 1 * MBPS, 60)

        outcome = simulate_download(trace, 0.0, 10 * MBPS, 3.0)

        assert not outcome.completed
        assert outcome.t_end == 3.0
        assert outcome.bits_delivered == pytest.approx(3 * MBPS)

    def test_start_not_before_deadline(self):
        trace = constant_trace("c", 1 * MBPS, 60)

        with pytest.raises(ValueError, match="not before deadline"):
            simulate_download(trace, 3.0, 1.0, 3.0)

    def test_deadline_past_trace_end(self):
        trace = constant_trace("c", 1 * MBPS, 60)

        with pytest.raises(ValueError, match="past trace end"):
            simulate_download(trace, 58.0, 1.0, 61.0)


class TestThroughputMeter:
    """Test application-layer throughput measurement."""

    def test_idle_time_excluded(self):
        meter = ThroughputMeter()
        meter.add(1.0, 3.0, 4 * MBPS)

        assert measure_throughput(meter, 0, 4) == pytest.approx(2 * MBPS)

    def test_no_overlap_is_undefined(self):
        meter = ThroughputMeter()
        meter.add(1.0, 3.0, 4 * MBPS)

        assert measure_throughput(meter, 0, 1) is None

    def test_two_records(self):
        meter = ThroughputMeter()
        meter.add(0.0, 2.0, 4 * MBPS)
        meter.add(3.0, 4.0, 2 * MBPS)

        assert measure_throughput(meter, 1, 4) == pytest.approx(2 * MBPS)

    def test_rejects_overlapping_records(self):
        meter = ThroughputMeter()
        meter.add(0.0, 2.0, 1.0)

        with pytest.raises(ValueError, match="overlaps"):
            meter.add(1.0, 3.0, 1.0)

    def test_in_flight_download_cut_at_as_of(self):
        trace = ThroughputTrace("t", np.array([2 * MBPS, 6 * MBPS] + [1 * MBPS] * 58))
        meter = ThroughputMeter(trace)
        meter.add(0.0, 4.0, 10 * MBPS)

        assert meter.measure(0, 1, as_of=1.0) == pytest.approx(2 * MBPS)
        assert meter.measure(0, 2, as_of=2.0) == pytest.approx(4 * MBPS)
        assert meter.measure(5, 6, as_of=2.0) is None

    def test_matches_discretized_integral(self):
        """Random record sets on a millisecond grid against a brute-force sum."""
        rng = np.random.default_rng(5)
        for _ in range(500):
            meter = ThroughputMeter()
            steps = np.zeros(30_000)
            covered = np.zeros(30_000, dtype=bool)
            t_ms = 0
            for _ in range(int(rng.integers(1, 6))):
                start = t_ms + int(rng.integers(0, 3000))
                end = start + int(rng.integers(1, 4000))
                if end >= len(steps):
                    break
                bits = float(rng.uniform(1e5, 1e7))
                meter.add(start / 1000, end / 1000, bits)
                steps[start:end] = bits / (end - start)
                covered[start:end] = True
                t_ms = end
            if not len(meter):
                continue

            t1 = int(rng.integers(0, 15_000))
            t2 = t1 + int(rng.integers(1, 15_000))
            window = slice(t1, t2)
            measured = meter.measure(t1 / 1000, t2 / 1000)
            if not covered[window].any():
                assert measured is None
                continue
            expected = steps[window].sum() / covered[window].sum() * 1000
            assert measured == pytest.approx(expected, rel=1e-3)


class TestBufferLevel:
    """Test the playback buffer."""

    def test_latest_deadline_plus_tau(self):
        assert buffer_level([(11.0, 13.0)], 13.0, 2.0) == pytest.approx(2.0)
        assert buffer_level([(11.0, 13.0)], 11.0, 2.0) == pytest.approx(4.0)

    def test_before_first_completion(self):
        assert buffer_level([(11.0, 13.0)], 10.0, 2.0) is None

    def test_runs_dry(self):
        assert buffer_level([(11.0, 13.0)], 16.0, 2.0) <= 0


class TestCatalog:
    """Test catalogs and timelines."""

    def test_constant_sizes(self):
        catalog = build_synthetic_catalog([1 * MBPS, 2 * MBPS], 5, 2.0)

        assert catalog.sizes_of(0) == (2 * MBPS, 4 * MBPS)
        assert catalog.n_segments == 5

    def test_varying_sizes_keep_mean_rate(self):
        catalog = build_synthetic_catalog([1 * MBPS, 2 * MBPS], 400, 2.0, 0.1, seed=4)

        mean_rates = catalog.segment_sizes.mean(axis=0) / 2.0
        np.testing.assert_allclose(mean_rates, [1 * MBPS, 2 * MBPS], rtol=0.03)

    def test_rejects_non_increasing_rates(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            build_synthetic_catalog([2 * MBPS, 1 * MBPS], 5, 2.0)

    def test_rejects_sizes_far_from_nominal_rate(self):
        with pytest.raises(ValueError, match="deviates"):
            MediaCatalog(2.0, (1 * MBPS,), np.full((4, 1), 4 * MBPS))

    def test_segment_out_of_range(self, small_catalog):
        with pytest.raises(ValueError, match="outside catalog"):
            small_catalog.size(60, 0)

    def test_timeline(self):
        timeline = Timeline(2.0, 5.0)

        assert timeline.availability(4) == 10.0
        assert timeline.deadline(4) == 13.0

    def test_timeline_rejects_short_delay(self):
        with pytest.raises(ValueError, match="at least 2\\*tau"):
            Timeline(2.0, 3.0)

    def test_load_catalog_generated(self, tmp_path):
        path = tmp_path / "catalog.yaml"
        path.write_text("tau: 2\ndelta_p: 6\nrates: [1000000, 2000000]\nn_segments: 10\n")

        catalog, timeline = load_catalog(path)

        assert catalog.n_segments == 10
        assert timeline.delta_p == 6.0

    def test_load_catalog_explicit_sizes(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text('{"tau": 1, "delta_p": 3, "rates": [1000], "sizes": [[1000], [1000]]}')

        catalog, _ = load_catalog(path)

        assert catalog.size(1, 0) == 1000.0

    def test_load_catalog_missing_fields(self, tmp_path):
        path = tmp_path / "catalog.yaml"
        path.write_text("tau: 2\n")

        with pytest.raises(ValueError, match="Missing required catalog fields"):
            load_catalog(path)

    def test_load_catalog_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_catalog(tmp_path / "nope.yaml")


class TestSimConfig:
    """Test session configuration validation."""

    def test_defaults(self):
        config = SimConfig()

        assert config.params == {"sigma_star": 0.05, "omega_star": 0.1}
        assert config.timeline().deadline(0) == 5.0

    def test_default_params_follow_algorithm(self):
        assert SimConfig(algorithm="festive").params == {"alpha": 12.0, "p": 0.85, "k": 4}

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="Unknown simulation config fields"):
            SimConfig.from_dict({"segment_length": 2})

    def test_horizon_must_cover_budget(self):
        with pytest.raises(ValueError, match="t_max"):
            SimConfig(t_max=2, delta_p=6.0)

    def test_invalid_algorithm_params(self):
        with pytest.raises(ValueError, match="omega_star"):
            SimConfig.from_dict({"params": {"sigma_star": 0.1, "omega_star": 2.0}})

    def test_from_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("algorithm: lowest\nsession_length_s: 50\nrates: [1000000]\n")

        config = SimConfig.from_yaml(path)

        assert config.algorithm == "lowest"
        assert config.rates == (1 * MBPS,)
        assert config.to_dict()["rates"] == [1 * MBPS]

    def test_from_yaml_empty(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("")

        with pytest.raises(ValueError, match="empty"):
            SimConfig.from_yaml(path)

    def test_segments_needed(self, short_session):
        """Deadlines up to t=110 cover segments 0..52."""
        assert short_session().segments_needed() == 53


class TestSessionEngine:
    """Test complete sessions."""

    def test_constant_trace_converges(self, constant_10mbps, short_session):
        """At 10 Mbps with a 3 s budget the 8 Mbps representation is the best fit."""
        config = short_session(params={"sigma_star": 0.05, "omega_star": 0.5})
        engine = SessionEngine(
            constant_10mbps, config.catalog(), config.timeline(), config
        )

        report = engine.run()

        assert report.n_skipped == 0
        assert report.first_segment == 4
        assert report.startup_delay_s == pytest.approx(3.0)
        assert report.events[0].forced and report.events[0].repr == 0
        assert [e.repr for e in report.events[10:]] == [3] * (len(report.events) - 10)
        for T in engine.history.horizons():
            np.testing.assert_allclose(engine.history.retained_values(T), 0.0, atol=1e-9)

    def test_segment_bookkeeping(self, constant_10mbps, short_session):
        report = _run(constant_10mbps, short_session())

        assert [e.segment for e in report.events] == list(range(4, 53))
        assert report.n_elapsed == report.n_played + report.n_skipped
        assert all(e.t_c <= e.t_p for e in report.events if not e.skipped)

    def test_zero_trace_skips_everything(self, zero_trace, short_session):
        report = _run(zero_trace, short_session())

        assert report.sigma == 1.0
        assert report.mean_repr is None
        assert report.startup_delay_s is None
        assert report.n_played == 0
        assert all(e.buffer_at_deadline == 0.0 for e in report.events)
        assert all(e.forced for e in report.events if e.repr is not None)

    def test_lowest_never_skips_on_ample_trace(self):
        trace = constant_trace("one", 1 * MBPS, 120)
        config = SimConfig(
            session_length_s=100.0, tune_in_time_s=10.0, algorithm="lowest"
        )

        report = _run(trace, config)

        assert report.sigma == 0.0
        assert report.omega == 0.0
        assert report.mean_repr == 0.0

    def test_festive_session(self, bursty, short_session):
        report = _run(bursty, short_session(algorithm="festive"))

        assert report.algorithm == "festive (reconstructed baseline)"
        assert 0.0 <= report.sigma <= 1.0
        assert report.n_played > 0

    def test_deterministic(self, bursty, short_session):
        config = short_session()

        first = _run(bursty, config).to_dict()
        second = _run(bursty, config).to_dict()

        assert first == second

    def test_session_longer_than_trace(self, constant_10mbps, short_session):
        config = short_session(session_length_s=200.0)

        with pytest.raises(ValueError, match="does not fit"):
            _run(constant_10mbps, config)

    def test_timeline_beyond_prediction_horizon(self, constant_10mbps, short_session):
        config = short_session()
        timeline = Timeline(2.0, 14.0)
        catalog = build_synthetic_catalog(config.rates, 60, 2.0)

        with pytest.raises(ValueError, match="t_max=10"):
            run_session(constant_10mbps, catalog, timeline, config)

    def test_catalog_too_short(self, constant_10mbps, short_session):
        config = short_session()
        catalog = build_synthetic_catalog(config.rates, 10, 2.0)

        with pytest.raises(ValueError, match="segments"):
            run_session(constant_10mbps, catalog, config.timeline(), config)

    def test_report_tables(self, bursty, short_session):
        report = _run(bursty, short_session())

        frame = report.events_frame()
        assert len(frame) == report.n_elapsed
        assert frame.columns[0] == "segment"
        summary = report.summary()
        assert set(summary) >= {"sigma", "omega", "mean_repr", "startup_delay_s"}
        assert len(report.buffer_series) == 101
        assert all(
            level is None or level >= 0 for _, level in report.buffer_series
        )
        assert not math.isnan(report.wasted_bits)


class TestTransitionAccounting:
    """Tune-in segments and the transition count."""

    def test_tune_in_after_skip_is_not_a_transition(self, short_session):
        """16 Mbps fits the first 40 s at 20 Mbps, then a download fails at 2 Mbps."""
        samples = np.concatenate([np.full(40, 20 * MBPS), np.full(80, 2 * MBPS)])
        trace = ThroughputTrace("drop", samples)
        config = short_session(algorithm="lowest")
        engine = SessionEngine(trace, config.catalog(), config.timeline(), config)
        engine.algorithm = _DropAfterSkip()

        report = engine.run()

        played = [e for e in report.events if not e.skipped]
        assert [e.repr for e in played if e.forced] == [0, 0]
        assert report.n_skipped >= 1
        # the single 16 -> 2 Mbps step is the only transition
        assert report.omega == pytest.approx(1 / report.n_played)
        first_low = next(e for e in played if e.repr == 1)
        assert first_low.j_prev == 4
        assert first_low.omega_at_request == 0.0

    def test_tune_in_does_not_reset_reference(self, short_session):
        samples = np.concatenate([np.full(40, 20 * MBPS), np.full(80, 2 * MBPS)])
        trace = ThroughputTrace("drop", samples)
        config = short_session(algorithm="lowest")
        engine = SessionEngine(trace, config.catalog(), config.timeline(), config)
        engine.algorithm = _DropAfterSkip()

        report = engine.run()

        retune = [e for e in report.events if e.forced and not e.skipped][1]
        assert retune.j_prev == 4
        assert engine.j_prev == 1

    def test_lowest_has_no_transitions_with_skips(self, short_session):
        samples = np.concatenate([np.full(40, 2 * MBPS), np.zeros(10), np.full(70, 2 * MBPS)])
        trace = ThroughputTrace("gap", samples)

        report = _run(trace, short_session(algorithm="lowest"))

        assert report.n_skipped > 0
        assert report.omega == 0.0


class TestAggression:
    """Skip fraction and quality against the skip target."""

    def test_sigma_and_quality_grow_with_sigma_star(self, short_session):
        traces = [
            bursty_trace(f"b{seed}", 200, 12 * MBPS, 1.5 * MBPS, 20, 0.3, seed=seed)
            for seed in range(4)
        ]
        sigmas, qualities = [], []
        for sigma_star in (0.01, 0.2, 0.8):
            config = short_session(params={"sigma_star": sigma_star, "omega_star": 1.0})
            reports = [_run(trace, config) for trace in traces]
            sigmas.append(np.mean([r.sigma for r in reports]))
            qualities.append(np.mean([r.mean_repr for r in reports]))

        assert sigmas[0] <= sigmas[1] <= sigmas[2]
        assert sigmas[0] < sigmas[2]
        assert qualities[0] <= qualities[1] <= qualities[2]
