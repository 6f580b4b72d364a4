"""
Relative prediction error histories and download success probabilities.

The signed relative error of a prediction is
``(max(rho_hat, rho_min) - max(rho, rho_min)) / max(rho, rho_min)``:
negative values are underestimations, non-negative ones overestimations.
Per-horizon histories of these errors yield the empirical CDF used to
estimate the probability that a segment downloads before its deadline.
This module also fits truncated parametric families to error magnitudes.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
from scipy import optimize, stats

if TYPE_CHECKING:
    from .predictors import PredictionRecord

logger = logging.getLogger(__name__)

DEFAULT_RHO_MIN = 10_000.0
DEFAULT_MIN_SAMPLES = 3
MIN_FIT_SAMPLES = 30
UNAVAILABLE = -1.0


class FitUnavailableError(ValueError):
    """Raised when too few error samples fall inside the fitting window."""


def rel_error(rho_hat: float, rho: float, rho_min: float = DEFAULT_RHO_MIN) -> float:
    """Absolute relative prediction error with both rates clamped at rho_min."""
    return abs(signed_rel_error(rho_hat, rho, rho_min))


def signed_rel_error(
    rho_hat: float, rho: float, rho_min: float = DEFAULT_RHO_MIN
) -> float:
    """Signed relative prediction error, always in (-1, inf)."""
    if rho_min <= 0:
        raise ValueError(f"rho_min must be positive, got {rho_min}")
    measured = max(rho, rho_min)
    return (max(rho_hat, rho_min) - measured) / measured


@dataclass(frozen=True)
class SignedRelError:
    """Signed error of the prediction for the window ending at ``t``."""

    t: float
    T: int
    value: float


@dataclass
class _HorizonLog:
    times: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)


class ErrorHistory:
    """
    Per-horizon store of signed relative prediction errors.

    Entries older than ``age_window_s`` relative to the query time are
    ignored by every query. Zero errors count as overestimations.
    """

    def __init__(
        self,
        age_window_s: float | None = None,
        rho_min: float = DEFAULT_RHO_MIN,
        min_samples: int = DEFAULT_MIN_SAMPLES,
    ):
        if age_window_s is not None and age_window_s <= 0:
            raise ValueError(f"age_window_s must be positive, got {age_window_s}")
        if rho_min <= 0:
            raise ValueError(f"rho_min must be positive, got {rho_min}")
        if min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {min_samples}")
        self.age_window_s = age_window_s
        self.rho_min = rho_min
        self.min_samples = min_samples
        self._logs: dict[int, _HorizonLog] = {}
        self._sorted_cache: dict[tuple[int, int, int], np.ndarray] = {}

    def record(self, t: float, T: int, value: float) -> None:
        """Append the error of the prediction for the window ending at t."""
        if not value > -1:
            raise ValueError(f"Signed relative error must be > -1, got {value}")
        log = self._logs.setdefault(T, _HorizonLog())
        position = bisect.bisect_right(log.times, t)
        log.times.insert(position, t)
        log.values.insert(position, value)
        self._sorted_cache = {
            key: cached for key, cached in self._sorted_cache.items() if key[0] != T
        }

    def horizons(self) -> list[int]:
        """Horizons with at least one recorded error."""
        return sorted(self._logs)

    def _window_start(self, log: _HorizonLog, now: float | None) -> int:
        if self.age_window_s is None or now is None:
            return 0
        return bisect.bisect_left(log.times, now - self.age_window_s)

    def _window_end(self, log: _HorizonLog, now: float | None) -> int:
        if now is None:
            return len(log.times)
        return bisect.bisect_right(log.times, now)

    def entries(self, T: int, now: float | None = None) -> list[SignedRelError]:
        """Retained entries for horizon T, oldest first."""
        log = self._logs.get(T)
        if log is None:
            return []
        start, end = self._window_start(log, now), self._window_end(log, now)
        return [
            SignedRelError(t, T, value)
            for t, value in zip(log.times[start:end], log.values[start:end])
        ]

    def retained_values(self, T: int, now: float | None = None) -> np.ndarray:
        """Sorted retained error values for horizon T."""
        log = self._logs.get(T)
        if log is None:
            return np.empty(0)
        start, end = self._window_start(log, now), self._window_end(log, now)
        key = (T, start, end)
        cached = self._sorted_cache.get(key)
        if cached is None:
            cached = np.sort(np.asarray(log.values[start:end], dtype=float))
            self._sorted_cache[key] = cached
        return cached

    def underestimation_frequency(self, T: int, now: float | None = None) -> float | None:
        """Fraction of retained errors below zero, or None without entries."""
        values = self.retained_values(T, now)
        if len(values) == 0:
            return None
        return float(np.searchsorted(values, 0.0, side="left")) / len(values)


def record_error(
    history: ErrorHistory, t: float, T: int, value: float
) -> ErrorHistory:
    """Append one signed error and return the same history."""
    history.record(t, T, value)
    return history


def signed_ecdf(
    history: ErrorHistory, T: int, x: float, now: float | None = None
) -> float | None:
    """
    Empirical P[error <= x] over retained errors for horizon T.

    Returns None when fewer than ``history.min_samples`` errors are retained.
    """
    values = history.retained_values(T, now)
    if len(values) < history.min_samples:
        return None
    return float(np.searchsorted(values, x, side="right")) / len(values)


def success_probability(
    history: ErrorHistory,
    prediction: PredictionRecord,
    size_bits: float,
    t_r: float,
    t_p: float,
    now: float | None = None,
) -> float:
    """
    Estimated probability of downloading ``size_bits`` within [t_r, t_p].

    Evaluates the signed-error ECDF of horizon ``prediction.T`` at
    ``rho_hat * (t_p - t_r) / size_bits - 1``. The prediction is clamped at
    rho_min the same way errors were measured. Returns the -1 sentinel when
    the prediction or the ECDF is unavailable.

    Raises:
        ValueError: If size_bits <= 0
    """
    if size_bits <= 0:
        raise ValueError(f"Segment size must be positive, got {size_bits}")
    if prediction.rho_hat is None:
        return UNAVAILABLE
    rho_hat = max(prediction.rho_hat, history.rho_min)
    x = rho_hat * (t_p - t_r) / size_bits - 1
    probability = signed_ecdf(history, prediction.T, x, now)
    return UNAVAILABLE if probability is None else probability


def select_prediction_interval(
    records: Mapping[tuple[int, int], PredictionRecord],
    t_r: float,
    t_p: float,
    t_max: int,
) -> tuple[int, int] | None:
    """
    Shortest predicted interval [t_pi, t_pi + T] containing [t_r, t_p].

    ``records`` maps (t, T) to the predictions made so far. Among intervals
    of equal length the most recent start wins.
    """
    latest_start = math.floor(t_r)
    for T in range(1, t_max + 1):
        earliest_start = math.ceil(t_p - T)
        for t_pi in range(latest_start, earliest_start - 1, -1):
            record = records.get((t_pi, T))
            if record is not None and record.available:
                return t_pi, T
    return None


def alternation_probability(
    history: ErrorHistory, T: int, now: float | None = None
) -> float | None:
    """
    Fraction of consecutive error pairs that switch between under- and overestimation.

    Returns None with fewer than two retained entries.
    """
    entries = history.entries(T, now)
    if len(entries) < 2:
        return None
    under = np.array([entry.value < 0 for entry in entries])
    return float(np.mean(under[1:] != under[:-1]))


def split_errors(signed: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split signed errors into (underestimation, overestimation) magnitudes."""
    values = np.asarray(signed, dtype=float)
    return -values[values < 0], values[values >= 0]


def load_error_table(path: Path) -> pd.DataFrame:
    """
    Read an error CSV with columns t, T, signed_error.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If required columns are missing
    """
    if not path.exists():
        raise FileNotFoundError(f"Error table not found: {path}")
    table = pd.read_csv(path)
    missing = {"t", "T", "signed_error"} - set(table.columns)
    if missing:
        raise ValueError(f"Error table {path} is missing columns: {sorted(missing)}")
    return table


class ErrorSide(str, Enum):
    """Which side of the signed error distribution a fit describes."""

    UNDER = "under"
    OVER = "over"


class Family(str, Enum):
    """Parametric families fitted to error magnitudes."""

    EXPONENTIAL = "exponential"
    NORMAL = "normal"
    LOGISTIC = "logistic"
    LOMAX = "lomax"


FIT_WINDOWS = {ErrorSide.UNDER: (0.1, 1.0), ErrorSide.OVER: (0.1, 5.0)}

_PARAM_NAMES = {
    Family.EXPONENTIAL: ("rate",),
    Family.NORMAL: ("loc", "scale"),
    Family.LOGISTIC: ("loc", "scale"),
    Family.LOMAX: ("alpha", "lambda"),
}


@dataclass(frozen=True)
class FittedDistribution:
    """Result of fitting a truncated family to error magnitudes."""

    family: Family
    params: dict[str, float]
    l2_distance: float
    ks_statistic: float
    ks_pvalue: float
    n_samples: int
    window: tuple[float, float]
    degenerate: bool = False

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation (NaN becomes None)."""

        def clean(value: float) -> float | None:
            return None if math.isnan(value) else value

        return {
            "family": self.family.value,
            "params": {name: clean(value) for name, value in self.params.items()},
            "l2_distance": clean(self.l2_distance),
            "ks_statistic": clean(self.ks_statistic),
            "ks_pvalue": clean(self.ks_pvalue),
            "n_samples": self.n_samples,
            "window": list(self.window),
            "degenerate": self.degenerate,
        }


def _frozen(family: Family, params: Sequence[float]) -> Any:
    """scipy frozen distribution for natural parameters."""
    if family is Family.EXPONENTIAL:
        return stats.expon(scale=1.0 / params[0])
    if family is Family.NORMAL:
        return stats.norm(loc=params[0], scale=params[1])
    if family is Family.LOGISTIC:
        return stats.logistic(loc=params[0], scale=params[1])
    return stats.lomax(c=params[0], scale=params[1])


def _truncated_cdf(
    family: Family, params: Sequence[float], x: np.ndarray, window: tuple[float, float]
) -> np.ndarray:
    a, b = window
    dist = _frozen(family, params)
    f_a, f_b = dist.cdf(a), dist.cdf(b)
    mass = f_b - f_a
    if not mass > 0:
        return np.full(len(x), np.nan)
    return np.clip((dist.cdf(x) - f_a) / mass, 0.0, 1.0)


def truncated_cdf(fit: FittedDistribution, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Evaluate a fitted truncated CDF."""
    points = np.clip(np.asarray(x, dtype=float), *fit.window)
    return _truncated_cdf(fit.family, list(fit.params.values()), points, fit.window)


def _to_natural(family: Family, theta: np.ndarray) -> list[float]:
    # optimizer works on log-parameters for everything that must stay positive
    if family is Family.EXPONENTIAL:
        return [math.exp(theta[0])]
    if family in (Family.NORMAL, Family.LOGISTIC):
        return [float(theta[0]), math.exp(theta[1])]
    return [math.exp(theta[0]), math.exp(theta[1])]


def _initial_guesses(family: Family, samples: np.ndarray) -> list[np.ndarray]:
    mean = float(samples.mean())
    std = float(samples.std())
    if family is Family.EXPONENTIAL:
        return [np.log([rate]) for rate in (1.0 / mean, 0.5 / mean, 2.0 / mean)]
    if family is Family.NORMAL:
        return [np.array([mean, math.log(std)]), np.array([0.0, math.log(mean)])]
    if family is Family.LOGISTIC:
        scale = std * math.sqrt(3) / math.pi
        return [np.array([mean, math.log(scale)]), np.array([0.0, math.log(mean)])]
    variance = std * std
    guesses = []
    if variance > mean * mean:
        alpha = 2 * variance / (variance - mean * mean)
        guesses.append(np.log([alpha, mean * (alpha - 1)]))
    for alpha in (0.5, 1.0, 2.0, 4.0):
        for scale in (0.1, 0.5, 2.0):
            guesses.append(np.log([alpha, scale]))
    return guesses


def _l2_objective(
    family: Family,
    theta: np.ndarray,
    points: np.ndarray,
    ecdf: np.ndarray,
    window: tuple[float, float],
) -> float:
    try:
        params = _to_natural(family, theta)
    except OverflowError:
        return math.inf
    model = _truncated_cdf(family, params, points, window)
    if np.any(np.isnan(model)):
        return math.inf
    return float(np.sum(np.square(model - ecdf)))


def fit_truncated(
    errors: Sequence[float] | np.ndarray, side: ErrorSide | str, family: Family | str
) -> FittedDistribution:
    """
    Fit a truncated family to error magnitudes by least squares on the CDF.

    Samples are restricted to the side's window ([0.1, 1.0] under, [0.1, 5.0]
    over); the truncated model CDF is matched to the truncated ECDF at the
    sample points with Nelder-Mead from several starting points. The fit is
    checked with a one-sample Kolmogorov-Smirnov test.

    Raises:
        FitUnavailableError: With fewer than 30 samples inside the window
    """
    side = ErrorSide(side)
    family = Family(family)
    window = FIT_WINDOWS[side]
    magnitudes = np.asarray(errors, dtype=float)
    inside = np.sort(magnitudes[(magnitudes >= window[0]) & (magnitudes <= window[1])])
    if len(inside) < MIN_FIT_SAMPLES:
        raise FitUnavailableError(
            f"{len(inside)} samples inside {window}, at least {MIN_FIT_SAMPLES} required"
        )

    names = _PARAM_NAMES[family]
    if np.ptp(inside) == 0:
        logger.warning("Degenerate %s fit: all %d samples equal", family.value, len(inside))
        return FittedDistribution(
            family=family,
            params={name: math.nan for name in names},
            l2_distance=math.nan,
            ks_statistic=math.nan,
            ks_pvalue=math.nan,
            n_samples=len(inside),
            window=window,
            degenerate=True,
        )

    ecdf = np.searchsorted(inside, inside, side="right") / len(inside)
    best: optimize.OptimizeResult | None = None
    for guess in _initial_guesses(family, inside):
        result = optimize.minimize(
            lambda theta: _l2_objective(family, theta, inside, ecdf, window),
            guess,
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000},
        )
        if best is None or result.fun < best.fun:
            best = result
    assert best is not None

    params = _to_natural(family, best.x)
    ks = stats.kstest(inside, lambda x: _truncated_cdf(family, params, x, window))
    fit = FittedDistribution(
        family=family,
        params=dict(zip(names, params)),
        l2_distance=float(best.fun),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        n_samples=len(inside),
        window=window,
    )
    logger.info(
        "Fitted %s (%s side): params=%s l2=%.6g ks=%.4f",
        family.value,
        side.value,
        fit.params,
        fit.l2_distance,
        fit.ks_statistic,
    )
    return fit


def fit_l2_distance(
    family: Family | str,
    params: Sequence[float],
    errors: Sequence[float] | np.ndarray,
    side: ErrorSide | str,
) -> float:
    """L2 objective of given natural parameters on the in-window samples."""
    family = Family(family)
    window = FIT_WINDOWS[ErrorSide(side)]
    magnitudes = np.asarray(errors, dtype=float)
    inside = np.sort(magnitudes[(magnitudes >= window[0]) & (magnitudes <= window[1])])
    ecdf = np.searchsorted(inside, inside, side="right") / len(inside)
    model = _truncated_cdf(family, params, inside, window)
    return float(np.sum(np.square(model - ecdf)))


def fit_all_families(
    errors: Sequence[float] | np.ndarray, side: ErrorSide | str
) -> list[FittedDistribution]:
    """Fit every family and return the results ordered by L2 distance."""
    fits = [fit_truncated(errors, side, family) for family in Family]
    return sorted(
        fits,
        key=lambda fit: (math.isnan(fit.l2_distance), fit.l2_distance, fit.family.value),
    )
