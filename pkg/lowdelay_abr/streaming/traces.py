"""
Throughput trace loading, validation, and characterization.

A trace is a sequence of per-second link throughput samples in bits/second.
It defines the piecewise-constant ground-truth rate function the simulator
downloads against: rate(t) = samples[floor(t)].
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_TRACE_SAMPLES = 60
DEFAULT_CV_THRESHOLD = 0.1
STATS_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class TraceError(Exception):
    """Raised when a trace file cannot be loaded or violates trace invariants."""

    def __init__(
        self,
        message: str,
        filepath: Path | None = None,
        line_number: int | None = None,
    ):
        self.filepath = filepath
        self.line_number = line_number

        error_msg = message
        if filepath:
            error_msg = f"Error in {filepath}: {message}"
        if line_number:
            error_msg += f" (line {line_number})"

        super().__init__(error_msg)


@dataclass(frozen=True, eq=False)
class ThroughputTrace:
    """
    Per-second link throughput samples.

    Immutable after construction; the cumulative-bits table is computed once
    so integrals and download completion times are O(log n).
    """

    trace_id: str
    samples: np.ndarray
    _cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise TraceError(f"Trace '{self.trace_id}' samples must be one-dimensional")
        if len(samples) < MIN_TRACE_SAMPLES:
            raise TraceError(
                f"Trace '{self.trace_id}' has {len(samples)} samples, "
                f"at least {MIN_TRACE_SAMPLES} required"
            )
        if not np.all(np.isfinite(samples)) or np.any(samples < 0):
            raise TraceError(
                f"Trace '{self.trace_id}' samples must be finite and non-negative"
            )
        samples.setflags(write=False)
        cumulative = np.concatenate(([0.0], np.cumsum(samples)))
        cumulative.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_cumulative", cumulative)

    @property
    def duration(self) -> int:
        """Trace length in seconds (one sample per second)."""
        return len(self.samples)

    @property
    def cumulative(self) -> np.ndarray:
        """Bits delivered by a continuous flow from t=0 up to each integer second."""
        return self._cumulative

    def rate(self, t: float) -> float:
        """Instantaneous rate at time t, for t in [0, duration)."""
        if not 0 <= t < self.duration:
            raise ValueError(f"Time {t} outside trace range [0, {self.duration})")
        return float(self.samples[math.floor(t)])

    def bits_until(self, t: float) -> float:
        """Integral of the rate function over [0, t], clamped to the trace range."""
        t = min(max(t, 0.0), float(self.duration))
        whole = math.floor(t)
        bits = float(self._cumulative[whole])
        if whole < self.duration:
            bits += float(self.samples[whole]) * (t - whole)
        return bits

    def integral(self, t1: float, t2: float) -> float:
        """Bits a continuous flow receives over [t1, t2]."""
        return self.bits_until(t2) - self.bits_until(t1)

    def time_for_bits(self, t_start: float, size_bits: float) -> float:
        """
        Earliest time at which ``size_bits`` have arrived since ``t_start``.

        Returns ``math.inf`` when the trace ends first.
        """
        target = self.bits_until(t_start) + size_bits
        if target > self._cumulative[-1]:
            return math.inf
        # first integer boundary k where the cumulative integral reaches target
        k = int(np.searchsorted(self._cumulative, target, side="left"))
        if k == 0:
            return t_start
        start_of_second = k - 1
        rate = float(self.samples[start_of_second])
        filled = target - float(self._cumulative[start_of_second])
        return max(t_start, start_of_second + filled / rate)


@dataclass(frozen=True)
class TraceStats:
    """Descriptive statistics of a (resampled) throughput series."""

    mean_bps: float
    cv: float | None
    autocorr_lag1: float | None
    diff_autocorr_lag1: float | None
    sampling_interval_s: int


def _parse_rate(text: str, filepath: Path, line_number: int) -> float:
    try:
        value = float(text)
    except ValueError as e:
        raise TraceError(f"Malformed rate '{text}'", filepath, line_number) from e
    if not math.isfinite(value):
        raise TraceError(f"Non-finite rate '{text}'", filepath, line_number)
    if value < 0:
        raise TraceError(f"Negative rate {value}", filepath, line_number)
    return value


def load_trace(path: Path, trace_id: str | None = None) -> ThroughputTrace:
    """
    Load a throughput trace from a text file.

    Format: UTF-8 text, optional '#' comment lines, then one decimal number
    per line giving the mean throughput in bits/second over the next
    1-second interval starting at t=0. Blank lines are ignored.

    Args:
        path: Path to the trace file
        trace_id: Identifier to assign (defaults to the file stem)

    Returns:
        Validated ThroughputTrace

    Raises:
        FileNotFoundError: If the file does not exist
        TraceError: On malformed or negative rates, or too few samples
    """
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except UnicodeDecodeError as e:
        raise TraceError(f"File encoding error: {e}", path) from e

    samples: list[float] = []
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        samples.append(_parse_rate(line, path, line_number))

    if len(samples) < MIN_TRACE_SAMPLES:
        raise TraceError(
            f"Trace too short: {len(samples)} samples, "
            f"at least {MIN_TRACE_SAMPLES} required",
            path,
        )

    trace = ThroughputTrace(trace_id or path.stem, np.array(samples))
    logger.debug("Loaded trace %s: %d samples", trace.trace_id, trace.duration)
    return trace


def save_trace(trace: ThroughputTrace, path: Path) -> None:
    """Write a trace in the text format read by ``load_trace``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# trace {trace.trace_id}: bits/second per 1 s interval"]
    lines.extend(f"{value:.6f}" for value in trace.samples)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def discover_traces(source: Path) -> list[Path]:
    """Return trace files in a directory (``*.csv``/``*.txt``, sorted) or the file itself."""
    if source.is_file():
        return [source]
    if not source.is_dir():
        raise FileNotFoundError(f"Trace source not found: {source}")
    return sorted(
        p for p in source.iterdir() if p.is_file() and p.suffix in {".csv", ".txt"}
    )


def resample(trace: ThroughputTrace | Sequence[float], interval_s: int) -> np.ndarray:
    """
    Average consecutive non-overlapping windows of ``interval_s`` samples.

    The trailing partial window is dropped.

    Raises:
        ValueError: If interval_s < 1 or exceeds the series length
    """
    samples = trace.samples if isinstance(trace, ThroughputTrace) else np.asarray(trace)
    if interval_s < 1:
        raise ValueError(f"interval_s must be >= 1, got {interval_s}")
    n_windows = len(samples) // interval_s
    if n_windows == 0:
        raise ValueError(
            f"interval_s={interval_s} exceeds series length {len(samples)}; "
            "resampling would be empty"
        )
    usable = np.asarray(samples[: n_windows * interval_s], dtype=float)
    return usable.reshape(n_windows, interval_s).mean(axis=1)


def _lag1_autocorr(series: np.ndarray) -> float | None:
    # constant series: variance is exactly zero, correlation undefined
    if np.ptp(series) == 0:
        return None
    deviations = series - series.mean()
    denominator = float(np.dot(deviations, deviations))
    numerator = float(np.dot(deviations[:-1], deviations[1:]))
    return numerator / denominator


def compute_stats(series: Sequence[float] | np.ndarray, interval_s: int = 1) -> TraceStats:
    """
    Compute mean, CV, and lag-1 autocorrelations of a rate series.

    CV uses the population standard deviation; the autocorrelation is the
    biased covariance-normalized estimator, also applied to the
    first-differenced series.

    Raises:
        ValueError: If the series has fewer than 3 values
    """
    values = np.asarray(series, dtype=float)
    if len(values) < 3:
        raise ValueError(f"At least 3 values required for statistics, got {len(values)}")

    mean = float(values.mean())
    cv = float(values.std()) / mean if mean > 0 else None

    return TraceStats(
        mean_bps=mean,
        cv=cv,
        autocorr_lag1=_lag1_autocorr(values),
        diff_autocorr_lag1=_lag1_autocorr(np.diff(values)),
        sampling_interval_s=interval_s,
    )


def filter_by_cv(
    traces: Iterable[ThroughputTrace], threshold: float = DEFAULT_CV_THRESHOLD
) -> list[ThroughputTrace]:
    """
    Keep traces whose 1-second CV is at least ``threshold``, preserving order.

    A threshold of 0 keeps every trace. Otherwise traces with zero mean have
    no CV and are removed.
    """
    if threshold <= 0:
        return list(traces)
    kept = []
    for trace in traces:
        stats = compute_stats(trace.samples, 1)
        if stats.cv is not None and stats.cv >= threshold:
            kept.append(trace)
        else:
            logger.info(
                "Removing trace %s (cv=%s < %s)", trace.trace_id, stats.cv, threshold
            )
    return kept


def trace_stats_table(
    traces: Iterable[ThroughputTrace], intervals: Sequence[int]
) -> pd.DataFrame:
    """One row of statistics per (trace, sampling interval)."""
    rows = []
    for trace in traces:
        for interval in intervals:
            try:
                stats = compute_stats(resample(trace, interval), interval)
            except ValueError as e:
                logger.warning(
                    "Skipping interval %d for trace %s: %s", interval, trace.trace_id, e
                )
                continue
            rows.append(
                {
                    "trace_id": trace.trace_id,
                    "interval_s": interval,
                    "mean_bps": stats.mean_bps,
                    "cv": stats.cv,
                    "autocorr_lag1": stats.autocorr_lag1,
                    "diff_autocorr_lag1": stats.diff_autocorr_lag1,
                }
            )
    columns = [
        "trace_id",
        "interval_s",
        "mean_bps",
        "cv",
        "autocorr_lag1",
        "diff_autocorr_lag1",
    ]
    return pd.DataFrame(rows, columns=columns)


def summarize_stats(table: pd.DataFrame) -> pd.DataFrame:
    """Quantiles of each statistic across traces, per sampling interval."""
    metrics = ["mean_bps", "cv", "autocorr_lag1", "diff_autocorr_lag1"]
    rows = []
    for interval, group in table.groupby("interval_s", sort=True):
        for metric in metrics:
            values = group[metric].dropna().to_numpy(dtype=float)
            row: dict[str, object] = {"interval_s": interval, "statistic": metric}
            for q in STATS_QUANTILES:
                row[f"q{q:g}"] = float(np.quantile(values, q)) if len(values) else None
            rows.append(row)
    return pd.DataFrame(rows)


def constant_trace(trace_id: str, rate_bps: float, duration_s: int) -> ThroughputTrace:
    """Trace with the same rate in every second."""
    return ThroughputTrace(trace_id, np.full(duration_s, float(rate_bps)))


def bursty_trace(
    trace_id: str,
    duration_s: int,
    high_bps: float,
    low_bps: float,
    period_s: int,
    noise_cv: float,
    seed: int,
) -> ThroughputTrace:
    """
    Alternating high/low rate blocks of ``period_s`` seconds with lognormal noise.

    The noise factor has unit mean and coefficient of variation ``noise_cv``.
    """
    if period_s < 1:
        raise ValueError(f"period_s must be >= 1, got {period_s}")
    rng = np.random.default_rng(seed)
    seconds = np.arange(duration_s)
    base = np.where((seconds // period_s) % 2 == 0, high_bps, low_bps)
    return ThroughputTrace(trace_id, base * lognormal_unit_mean(rng, noise_cv, duration_s))


def lognormal_unit_mean(rng: np.random.Generator, cv: float, size: int) -> np.ndarray:
    """Lognormal multipliers with mean 1 and coefficient of variation ``cv``."""
    if cv < 0:
        raise ValueError(f"cv must be non-negative, got {cv}")
    if cv == 0:
        return np.ones(size)
    sigma2 = math.log1p(cv * cv)
    return rng.lognormal(mean=-sigma2 / 2, sigma=math.sqrt(sigma2), size=size)
