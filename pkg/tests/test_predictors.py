"""
Tests for throughput predictors and predictor evaluation.
"""

import math

import numpy as np
import pytest

from lowdelay_abr.streaming.predictors import (
    HW_GRID,
    MeanType,
    PredictorMethod,
    PredictorSpec,
    error_fractions_below,
    error_quantiles,
    evaluate_predictor,
    hw_predict,
    linext_predict,
    predict_all_scales,
    sma_predict,
    trace_window_meter,
)
from lowdelay_abr.streaming.traces import constant_trace


def _hw_oracle(history, grid=HW_GRID):
    """Replay the Holt-Winters recursion for every grid point, first minimum wins."""
    best_mse = math.inf
    best_value = math.nan
    for alpha in grid:
        for beta in grid:
            level = history[1]
            trend = history[1] - history[0]
            squared_error = 0.0
            for x in history[2:]:
                forecast = level + trend
                squared_error = squared_error + (x - forecast) * (x - forecast)
                new_level = alpha * x + (1 - alpha) * forecast
                trend = beta * (new_level - level) + (1 - beta) * trend
                level = new_level
            mse = squared_error / (len(history) - 2)
            if mse < best_mse:
                best_mse = mse
                best_value = level + trend
    return best_value


class TestPredictorSpec:
    """Test the predictor shorthand parser."""

    def test_parse_sma(self):
        spec = PredictorSpec.parse("SMA:3:hm")

        assert spec.method is PredictorMethod.SMA
        assert spec.n == 3
        assert spec.mean_type is MeanType.HARMONIC
        assert spec.label == "SMA:3:hm"

    def test_parse_linext_and_hw(self):
        assert PredictorSpec.parse("LinExt:2").label == "LinExt:2"
        assert PredictorSpec.parse("hw:4:mse").label == "HW:4:mse"

    @pytest.mark.parametrize(
        "text, message",
        [
            ("ARIMA:2", "Unknown prediction method"),
            ("SMA:x:ar", "Invalid history length"),
            ("SMA:2:median", "Unknown mean type"),
            ("LinExt:1", "requires n >= 2"),
            ("HW:2:mse", "requires n >= 3"),
            ("SMA", "must look like"),
        ],
    )
    def test_parse_errors(self, text, message):
        with pytest.raises(ValueError, match=message):
            PredictorSpec.parse(text)


class TestSma:
    """Test simple moving averages."""

    def test_latest_value(self):
        assert sma_predict([5e6], MeanType.ARITHMETIC) == 5e6

    def test_harmonic(self):
        assert sma_predict([2, 3, 6], MeanType.HARMONIC) == pytest.approx(3.0)

    def test_geometric(self):
        assert sma_predict([4, 9], MeanType.GEOMETRIC) == pytest.approx(6.0)

    def test_zero_value_is_undefined_for_gm_and_hm(self):
        assert sma_predict([0, 4], MeanType.GEOMETRIC) is None
        assert sma_predict([0, 4], MeanType.HARMONIC) is None
        assert sma_predict([0, 4], MeanType.ARITHMETIC) == 2.0


class TestLinExt:
    """Test least-squares linear extrapolation."""

    def test_exact_lines(self):
        assert linext_predict([2, 4]) == pytest.approx(6.0)
        assert linext_predict([5, 5, 5]) == pytest.approx(5.0)
        assert linext_predict([1, 2, 3, 4]) == pytest.approx(5.0)

    def test_needs_two_values(self):
        with pytest.raises(ValueError):
            linext_predict([1.0])


class TestHoltWinters:
    """Test the grid-tuned Holt-Winters predictor."""

    def test_linear_data_is_exact(self):
        assert hw_predict([1, 2, 3]) == pytest.approx(4.0)

    def test_constant_series(self):
        assert hw_predict([5, 5, 5, 5]) == pytest.approx(5.0)

    def test_matches_grid_oracle(self):
        history = [2.0, 4.0, 3.0, 5.0, 4.0]

        assert hw_predict(history) == _hw_oracle(history)

    def test_needs_three_values(self):
        with pytest.raises(ValueError):
            hw_predict([1.0, 2.0])


class TestOracleEquivalence:
    """Random series against closed-form and brute-force oracles."""

    def test_sma_and_linext(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n = int(rng.integers(2, 51))
            values = rng.uniform(0.1, 100.0, size=n)
            history = list(values)

            assert sma_predict(history, MeanType.ARITHMETIC) == pytest.approx(
                float(np.sum(values) / n), rel=1e-9
            )
            assert sma_predict(history, MeanType.GEOMETRIC) == pytest.approx(
                float(np.exp(np.mean(np.log(values)))), rel=1e-9
            )
            assert sma_predict(history, MeanType.HARMONIC) == pytest.approx(
                float(n / np.sum(1.0 / values)), rel=1e-9
            )
            slope, intercept = np.polyfit(np.arange(1, n + 1), values, 1)
            expected = slope * (n + 1) + intercept
            assert linext_predict(history) == pytest.approx(
                expected, rel=1e-9, abs=1e-9 * float(np.max(values))
            )

    @pytest.mark.slow
    def test_hw_exhaustive_grid(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(3, 16))
            history = [float(v) for v in rng.uniform(0.1, 100.0, size=n)]

            assert hw_predict(history) == _hw_oracle(history)

    def test_mean_ordering(self):
        """Harmonic <= geometric <= arithmetic for positive samples."""
        rng = np.random.default_rng(43)
        for _ in range(1000):
            history = list(rng.lognormal(0.0, 1.5, size=int(rng.integers(1, 40))))

            hm = sma_predict(history, MeanType.HARMONIC)
            gm = sma_predict(history, MeanType.GEOMETRIC)
            am = sma_predict(history, MeanType.ARITHMETIC)

            assert hm <= gm * (1 + 1e-12)
            assert gm <= am * (1 + 1e-12)

    @pytest.mark.parametrize("mean_type", list(MeanType))
    def test_sma_scale_equivariance(self, mean_type):
        rng = np.random.default_rng(44)
        for _ in range(300):
            values = rng.uniform(0.1, 100.0, size=int(rng.integers(1, 30)))
            scale = float(rng.uniform(0.01, 1e4))

            scaled = sma_predict(list(values * scale), mean_type)

            expected = scale * sma_predict(list(values), mean_type)
            assert scaled == pytest.approx(expected, rel=1e-9)


class TestPredictAllScales:
    """Test the multi-timescale prediction engine."""

    def test_constant_activity(self):
        def meter(t1, t2):
            return 10e6 if t1 >= 0 else None

        records = predict_all_scales(meter, 20, PredictorSpec.parse("SMA:1:ar"), t_max=3)

        assert [r.T for r in records] == [1, 2, 3]
        assert all(r.rho_hat == 10e6 for r in records)
        assert all(r.t == 20 for r in records)

    def test_no_downloads_yet(self):
        records = predict_all_scales(
            lambda t1, t2: None, 5, PredictorSpec.parse("SMA:1:ar"), t_max=10
        )

        assert len(records) == 10
        assert not any(r.available for r in records)

    def test_insufficient_history(self):
        def meter(t1, t2):
            return 1e6 if t1 >= 0 else None

        records = predict_all_scales(meter, 5, PredictorSpec.parse("SMA:2:ar"), t_max=5)

        assert records[4].T == 5
        assert records[4].rho_hat is None
        assert records[1].rho_hat == 1e6

    def test_windows_are_back_to_back_blocks(self):
        seen = []

        def meter(t1, t2):
            seen.append((t1, t2))
            return 1.0

        predict_all_scales(meter, 10, PredictorSpec.parse("SMA:2:ar"), t_max=3)

        assert (4, 7) in seen and (7, 10) in seen

    def test_rejects_t_zero(self):
        with pytest.raises(ValueError, match="t >= 1"):
            predict_all_scales(lambda a, b: 1.0, 0, PredictorSpec.parse("SMA:1:ar"))


class TestEvaluatePredictor:
    """Test offline predictor evaluation on traces."""

    def test_constant_trace_has_zero_errors(self):
        trace = constant_trace("c", 5e6, 60)

        errors = evaluate_predictor(trace, PredictorSpec.parse("SMA:1:ar"), t_max=5)

        assert list(errors.columns) == ["t", "T", "signed_error"]
        assert len(errors) > 0
        assert np.allclose(errors["signed_error"], 0.0)
        assert set(errors["T"]) == {1, 2, 3, 4, 5}

    def test_trace_window_meter_bounds(self):
        trace = constant_trace("c", 5e6, 60)
        meter = trace_window_meter(trace)

        assert meter(0, 2) == pytest.approx(5e6)
        assert meter(-1, 1) is None
        assert meter(59, 61) is None

    def test_quantiles_and_fractions(self, bursty):
        errors = evaluate_predictor(bursty, PredictorSpec.parse("SMA:1:ar"), t_max=3)

        quantiles = error_quantiles(errors, (0.2, 0.5, 0.9))
        fractions = error_fractions_below(errors)

        assert set(quantiles["side"]) == {"under", "over"}
        assert len(quantiles) == 6
        assert {"q0.2", "q0.5", "q0.9"} <= set(quantiles.columns)
        assert {"below_0.2", "below_0.5", "below_1"} <= set(fractions.columns)
        under = quantiles[quantiles["side"] == "under"]
        assert (under["q0.9"] <= 1.0).all()
        assert ((fractions["below_0.2"] <= fractions["below_1"]) | fractions["below_1"].isna()).all()
