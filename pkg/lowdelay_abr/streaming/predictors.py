"""
One-step-ahead throughput prediction on multiple time scales.

Three methods are supported, written as ``<type>:<n>:<parameters>``:

- ``SMA:n:ar|gm|hm`` -- simple moving average (arithmetic/geometric/harmonic)
- ``LinExt:n`` -- least-squares line through the last n values, extrapolated one step
- ``HW:n:mse`` -- Holt-Winters double exponential smoothing, (alpha, beta)
  tuned per prediction on a fixed grid by in-sample MSE
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy import stats

from .error_model import signed_rel_error
from .traces import ThroughputTrace

logger = logging.getLogger(__name__)

DEFAULT_T_MAX = 10
HW_GRID: tuple[float, ...] = tuple(k / 20 for k in range(21))
ERROR_QUANTILES = (0.2, 0.5, 0.9)
ERROR_THRESHOLDS = (0.2, 0.5, 1.0)

# (t1, t2) -> average throughput over [t1, t2], or None when undefined
MeterView = Callable[[float, float], float | None]


class PredictorMethod(str, Enum):
    """Prediction method family."""

    SMA = "SMA"
    LINEXT = "LINEXT"
    HW = "HW"


class MeanType(str, Enum):
    """Mean used by the simple moving average."""

    ARITHMETIC = "ar"
    GEOMETRIC = "gm"
    HARMONIC = "hm"


_MIN_HISTORY = {PredictorMethod.SMA: 1, PredictorMethod.LINEXT: 2, PredictorMethod.HW: 3}


@dataclass(frozen=True)
class PredictorSpec:
    """Validated predictor configuration."""

    method: PredictorMethod
    n: int
    mean_type: MeanType = MeanType.ARITHMETIC
    grid: tuple[float, ...] = HW_GRID

    def __post_init__(self) -> None:
        minimum = _MIN_HISTORY[self.method]
        if self.n < minimum:
            raise ValueError(
                f"{self.method.value} requires n >= {minimum}, got n={self.n}"
            )
        if self.method is PredictorMethod.HW and not self.grid:
            raise ValueError("HW tuning grid must not be empty")

    @classmethod
    def parse(cls, text: str) -> "PredictorSpec":
        """
        Parse the ``<type>:<n>:<parameters>`` shorthand.

        Raises:
            ValueError: On unknown methods, mean types, or malformed n
        """
        parts = [part.strip() for part in text.split(":")]
        if len(parts) < 2:
            raise ValueError(f"Predictor must look like 'SMA:1:ar', got '{text}'")
        method_name = parts[0].upper()
        try:
            method = PredictorMethod(method_name)
        except ValueError as e:
            raise ValueError(f"Unknown prediction method '{parts[0]}'") from e
        try:
            n = int(parts[1])
        except ValueError as e:
            raise ValueError(f"Invalid history length '{parts[1]}' in '{text}'") from e

        if method is PredictorMethod.SMA:
            mean_name = parts[2].lower() if len(parts) > 2 else "ar"
            try:
                mean_type = MeanType(mean_name)
            except ValueError as e:
                raise ValueError(f"Unknown mean type '{mean_name}' in '{text}'") from e
            return cls(method, n, mean_type)
        if method is PredictorMethod.HW and len(parts) > 2 and parts[2] != "mse":
            raise ValueError(f"Only MSE tuning is supported for HW, got '{parts[2]}'")
        return cls(method, n)

    @property
    def label(self) -> str:
        """Canonical shorthand, e.g. ``SMA:1:ar``."""
        if self.method is PredictorMethod.SMA:
            return f"SMA:{self.n}:{self.mean_type.value}"
        if self.method is PredictorMethod.LINEXT:
            return f"LinExt:{self.n}"
        return f"HW:{self.n}:mse"


@dataclass(frozen=True)
class PredictionRecord:
    """Prediction made at second ``t`` for the interval [t, t + T]."""

    t: int
    T: int
    rho_hat: float | None

    @property
    def available(self) -> bool:
        """False when any required past window throughput was undefined."""
        return self.rho_hat is not None


def sma_predict(history: Sequence[float], mean_type: MeanType) -> float | None:
    """
    Mean of the past values.

    Returns None for geometric/harmonic means over a zero value.
    """
    values = np.asarray(history, dtype=float)
    if len(values) == 0:
        raise ValueError("SMA needs at least one past value")
    if mean_type is MeanType.ARITHMETIC:
        return float(values.mean())
    if np.any(values <= 0):
        return None
    if mean_type is MeanType.GEOMETRIC:
        return float(stats.gmean(values))
    return float(stats.hmean(values))


def linext_predict(history: Sequence[float]) -> float:
    """Least-squares line through (1..n, history) evaluated at n + 1."""
    values = np.asarray(history, dtype=float)
    n = len(values)
    if n < 2:
        raise ValueError("Linear extrapolation needs at least two past values")
    x = np.arange(1, n + 1, dtype=float)
    x_mean = x.mean()
    y_mean = values.mean()
    slope = float(np.dot(x - x_mean, values - y_mean) / np.dot(x - x_mean, x - x_mean))
    return float(y_mean + slope * (n + 1 - x_mean))


def hw_predict(history: Sequence[float], grid: Sequence[float] = HW_GRID) -> float:
    """
    Holt-Winters one-step prediction a_n + b_n.

    Starts from a_2 = x_2, b_2 = x_2 - x_1. (alpha, beta) is chosen from
    ``grid`` x ``grid`` minimizing the in-sample one-step MSE over x_3..x_n;
    ties go to the smallest alpha, then the smallest beta.
    """
    values = [float(v) for v in history]
    if len(values) < 3:
        raise ValueError("Holt-Winters needs at least three past values")

    grid_values = np.asarray(grid, dtype=float)
    alpha, beta = np.meshgrid(grid_values, grid_values, indexing="ij")
    level = np.full(alpha.shape, values[1])
    trend = np.full(alpha.shape, values[1] - values[0])
    squared_error = np.zeros(alpha.shape)

    for x in values[2:]:
        forecast = level + trend
        squared_error = squared_error + np.square(x - forecast)
        new_level = alpha * x + (1 - alpha) * forecast
        trend = beta * (new_level - level) + (1 - beta) * trend
        level = new_level

    mse = squared_error / (len(values) - 2)
    # argmin returns the first minimum in row-major (alpha, beta) order
    best = int(np.argmin(mse))
    return float(level.flat[best] + trend.flat[best])


def predict(history: Sequence[float], spec: PredictorSpec) -> float | None:
    """Dispatch to the configured prediction method."""
    if spec.method is PredictorMethod.SMA:
        return sma_predict(history, spec.mean_type)
    if spec.method is PredictorMethod.LINEXT:
        return linext_predict(history)
    return hw_predict(history, spec.grid)


def predict_all_scales(
    meter: MeterView, t: int, spec: PredictorSpec, t_max: int = DEFAULT_T_MAX
) -> list[PredictionRecord]:
    """
    Predict the throughput of [t, t + T] for every T in 1..t_max.

    For horizon T the inputs are the n back-to-back past windows
    [t - iT, t - (i-1)T], oldest first. A record is unavailable when any
    window lies before t=0 or has undefined throughput.
    """
    if t < 1:
        raise ValueError(f"Predictions start at t >= 1, got {t}")
    records = []
    for T in range(1, t_max + 1):
        rho_hat = None
        if t - spec.n * T >= 0:
            history = [meter(t - i * T, t - (i - 1) * T) for i in range(spec.n, 0, -1)]
            if all(value is not None for value in history):
                rho_hat = predict([v for v in history if v is not None], spec)
        records.append(PredictionRecord(t=t, T=T, rho_hat=rho_hat))
    return records


def trace_window_meter(trace: ThroughputTrace) -> MeterView:
    """Meter view of a continuously downloading flow over the whole trace."""

    def measure(t1: float, t2: float) -> float | None:
        if t1 < 0 or t2 > trace.duration or t2 <= t1:
            return None
        return trace.integral(t1, t2) / (t2 - t1)

    return measure


def evaluate_predictor(
    trace: ThroughputTrace,
    spec: PredictorSpec,
    t_max: int = DEFAULT_T_MAX,
    rho_min: float = 10_000.0,
) -> pd.DataFrame:
    """
    Signed relative errors of per-second predictions on a continuous flow.

    Returns a table with columns t, T, signed_error where t is the end of
    the predicted window.
    """
    meter = trace_window_meter(trace)
    rows = []
    for t in range(1, trace.duration):
        for record in predict_all_scales(meter, t, spec, t_max):
            end = t + record.T
            if record.rho_hat is None or end > trace.duration:
                continue
            measured = meter(t, end)
            if measured is None:
                continue
            rows.append(
                {
                    "t": end,
                    "T": record.T,
                    "signed_error": signed_rel_error(record.rho_hat, measured, rho_min),
                }
            )
    logger.info(
        "Evaluated %s on trace %s: %d error samples",
        spec.label,
        trace.trace_id,
        len(rows),
    )
    return pd.DataFrame(rows, columns=["t", "T", "signed_error"])


def _sides(errors: pd.DataFrame) -> list[tuple[int, str, np.ndarray]]:
    groups = []
    for T, group in errors.groupby("T", sort=True):
        signed = group["signed_error"].to_numpy(dtype=float)
        groups.append((int(T), "under", -signed[signed < 0]))
        groups.append((int(T), "over", signed[signed >= 0]))
    return groups


def error_quantiles(
    errors: pd.DataFrame, quantiles: Sequence[float] = ERROR_QUANTILES
) -> pd.DataFrame:
    """Quantiles of under- and overestimation magnitudes per horizon."""
    rows = []
    for T, side, magnitudes in _sides(errors):
        row: dict[str, object] = {"T": T, "side": side, "count": len(magnitudes)}
        for q in quantiles:
            row[f"q{q:g}"] = float(np.quantile(magnitudes, q)) if len(magnitudes) else None
        rows.append(row)
    return pd.DataFrame(rows)


def error_fractions_below(
    errors: pd.DataFrame, thresholds: Sequence[float] = ERROR_THRESHOLDS
) -> pd.DataFrame:
    """Fraction of under-/overestimation magnitudes below each threshold, per horizon."""
    rows = []
    for T, side, magnitudes in _sides(errors):
        row: dict[str, object] = {"T": T, "side": side, "count": len(magnitudes)}
        for threshold in thresholds:
            row[f"below_{threshold:g}"] = (
                float(np.mean(magnitudes < threshold)) if len(magnitudes) else None
            )
        rows.append(row)
    return pd.DataFrame(rows)
