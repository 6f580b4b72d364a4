"""
Virtual-time session engine for low-delay live streaming.

A session tunes into a live stream over one throughput trace and requests
segments one at a time. Downloads consume the trace's piecewise-constant
rate; a download that misses its playback deadline is severed there and
the segment is skipped. Every integer second the engine records the
prediction errors that became measurable and predicts the throughput of
the next 1..t_max seconds from the application-layer meter.
"""

import bisect
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import yaml

from .adaptation import (
    ALGORITHMS,
    AdaptationAlgorithm,
    ContractViolation,
    SelectionView,
    create_algorithm,
    next_tune_in,
)
from .error_model import (
    DEFAULT_MIN_SAMPLES,
    DEFAULT_RHO_MIN,
    UNAVAILABLE,
    ErrorHistory,
    select_prediction_interval,
    signed_rel_error,
    success_probability,
)
from .predictors import MeterView, PredictionRecord, PredictorSpec, predict_all_scales
from .traces import ThroughputTrace, lognormal_unit_mean

logger = logging.getLogger(__name__)

DEFAULT_LADDER_BPS: tuple[float, ...] = (
    101e3,
    194e3,
    377e3,
    730e3,
    1415e3,
    2743e3,
    5319e3,
    10314e3,
    20000e3,
)
MMBR_TOLERANCE = 0.1
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "lolypop": {"sigma_star": 0.05, "omega_star": 0.1},
    "festive": {"alpha": 12.0, "p": 0.85, "k": 4},
    "lowest": {},
}
_TIME_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class MediaCatalog:
    """Representation ladder and per-segment sizes (bits), shape (n_segments, n_reprs)."""

    tau: float
    representations: tuple[float, ...]
    segment_sizes: np.ndarray

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        rates = np.asarray(self.representations, dtype=float)
        if len(rates) == 0:
            raise ValueError("Catalog needs at least one representation")
        if np.any(np.diff(rates) <= 0):
            raise ValueError(f"Representation rates must be strictly increasing: {rates}")
        sizes = np.asarray(self.segment_sizes, dtype=float)
        if sizes.ndim != 2 or sizes.shape[1] != len(rates) or sizes.shape[0] == 0:
            raise ValueError(
                f"segment_sizes must have shape (n_segments, {len(rates)}), got {sizes.shape}"
            )
        if not np.all(sizes > 0):
            raise ValueError("Segment sizes must be positive")
        mmbr = sizes.mean(axis=0) / self.tau
        deviation = np.abs(mmbr / rates - 1)
        if np.any(deviation > MMBR_TOLERANCE):
            worst = int(np.argmax(deviation))
            raise ValueError(
                f"Mean segment rate of representation {worst} ({mmbr[worst]:.0f} bps) "
                f"deviates more than {MMBR_TOLERANCE:.0%} from {rates[worst]:.0f} bps"
            )
        sizes.setflags(write=False)
        object.__setattr__(self, "representations", tuple(float(r) for r in rates))
        object.__setattr__(self, "segment_sizes", sizes)

    @property
    def n_segments(self) -> int:
        return int(self.segment_sizes.shape[0])

    @property
    def n_representations(self) -> int:
        return len(self.representations)

    def size(self, segment: int, repr_index: int) -> float:
        """Size in bits of one segment in one representation."""
        if not 0 <= segment < self.n_segments:
            raise ValueError(
                f"Segment {segment} outside catalog of {self.n_segments} segments"
            )
        return float(self.segment_sizes[segment, repr_index])

    def sizes_of(self, segment: int) -> tuple[float, ...]:
        """Sizes of one segment in every representation."""
        if not 0 <= segment < self.n_segments:
            raise ValueError(
                f"Segment {segment} outside catalog of {self.n_segments} segments"
            )
        return tuple(float(s) for s in self.segment_sizes[segment])


@dataclass(frozen=True)
class Timeline:
    """Live timeline: segment i is published at (i+1)*tau and played at i*tau + delta_p."""

    tau: float
    delta_p: float

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.delta_p < 2 * self.tau:
            raise ValueError(
                f"delta_p={self.delta_p} must be at least 2*tau={2 * self.tau}"
            )

    def availability(self, segment: int) -> float:
        return (segment + 1) * self.tau

    def deadline(self, segment: int) -> float:
        return segment * self.tau + self.delta_p


def build_synthetic_catalog(
    rates: tuple[float, ...] | list[float],
    n_segments: int,
    tau: float,
    variation_cv: float = 0.0,
    seed: int = 0,
) -> MediaCatalog:
    """
    Catalog with sizes rate * tau * m_i.

    The multiplier m_i is shared by all representations of segment i: 1 when
    variation_cv is 0, otherwise lognormal with unit mean and the given CV.

    Raises:
        ValueError: On non-increasing rates or invalid sizes
    """
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    rate_array = np.asarray(rates, dtype=float)
    if len(rate_array) and np.any(np.diff(rate_array) <= 0):
        raise ValueError(f"Representation rates must be strictly increasing: {list(rates)}")
    rng = np.random.default_rng(seed)
    multipliers = lognormal_unit_mean(rng, variation_cv, n_segments)
    sizes = np.outer(multipliers, rate_array) * tau
    return MediaCatalog(tau=tau, representations=tuple(rate_array), segment_sizes=sizes)


def load_catalog(path: Path) -> tuple[MediaCatalog, Timeline]:
    """
    Load a catalog file (YAML or JSON).

    Accepts either ``{tau, delta_p, rates, n_segments, variation_cv, seed}``
    or ``{tau, delta_p, rates, sizes}`` with an explicit sizes matrix.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If fields are missing or invalid
    """
    if not path.exists():
        raise FileNotFoundError(f"Catalog file not found: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ValueError(f"Catalog file {path} is not valid YAML/JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ValueError(f"Catalog file {path} is empty or not a mapping")

    missing = [name for name in ("tau", "delta_p", "rates") if name not in raw]
    if missing:
        raise ValueError(f"Missing required catalog fields: {missing}")
    tau = float(raw["tau"])
    timeline = Timeline(tau=tau, delta_p=float(raw["delta_p"]))
    rates = tuple(float(r) for r in raw["rates"])

    if "sizes" in raw:
        catalog = MediaCatalog(
            tau=tau, representations=rates, segment_sizes=np.asarray(raw["sizes"], dtype=float)
        )
    elif "n_segments" in raw:
        catalog = build_synthetic_catalog(
            rates,
            int(raw["n_segments"]),
            tau,
            float(raw.get("variation_cv", 0.0)),
            int(raw.get("seed", 0)),
        )
    else:
        raise ValueError("Catalog needs either 'sizes' or 'n_segments'")
    logger.debug(
        "Loaded catalog %s: %d representations, %d segments",
        path,
        catalog.n_representations,
        catalog.n_segments,
    )
    return catalog, timeline


@dataclass(frozen=True)
class DownloadOutcome:
    """Result of one segment download."""

    t_start: float
    t_end: float
    size_bits: float
    bits_delivered: float
    completed: bool


def simulate_download(
    trace: ThroughputTrace, t_start: float, size_bits: float, deadline: float
) -> DownloadOutcome:
    """
    Download ``size_bits`` starting at t_start, severing the transfer at the deadline.

    Raises:
        ValueError: If t_start >= deadline or the deadline lies past the trace end
    """
    if not t_start < deadline:
        raise ValueError(f"Download start {t_start} not before deadline {deadline}")
    if deadline > trace.duration + _TIME_EPS:
        raise ValueError(f"Deadline {deadline} past trace end {trace.duration}")
    t_complete = trace.time_for_bits(t_start, size_bits)
    if t_complete <= deadline:
        return DownloadOutcome(t_start, t_complete, size_bits, size_bits, True)
    return DownloadOutcome(
        t_start, deadline, size_bits, trace.integral(t_start, deadline), False
    )


class ThroughputMeter:
    """
    Application-layer throughput from download records.

    Records are sequential and non-overlapping. The average throughput over
    [t1, t2] apportions each record's bits uniformly over its duration and
    divides by the time covered by downloads, so idle periods are excluded.
    """

    def __init__(self, trace: ThroughputTrace | None = None):
        self.trace = trace
        self._starts: list[float] = []
        self._ends: list[float] = []
        self._bits: list[float] = []

    def __len__(self) -> int:
        return len(self._starts)

    def add(self, t_start: float, t_end: float, bits: float) -> None:
        """Append a download record."""
        if t_end < t_start:
            raise ValueError(f"Record ends ({t_end}) before it starts ({t_start})")
        if self._ends and t_start < self._ends[-1] - _TIME_EPS:
            raise ValueError(
                f"Record starting at {t_start} overlaps previous record ending at {self._ends[-1]}"
            )
        self._starts.append(t_start)
        self._ends.append(t_end)
        self._bits.append(bits)

    def add_outcome(self, outcome: DownloadOutcome) -> None:
        self.add(outcome.t_start, outcome.t_end, outcome.bits_delivered)

    def _bits_before(self, index: int, as_of: float) -> float:
        start, end, bits = self._starts[index], self._ends[index], self._bits[index]
        if self.trace is not None:
            return self.trace.integral(start, as_of)
        return bits * (as_of - start) / (end - start)

    def measure(self, t1: float, t2: float, as_of: float | None = None) -> float | None:
        """
        Average throughput over [t1, t2], or None when no download overlaps it.

        With ``as_of`` set, records are cut at that time as if the in-flight
        download had only delivered the bits received so far.
        """
        if not t1 < t2:
            raise ValueError(f"Window start {t1} not before end {t2}")
        total_bits = 0.0
        total_time = 0.0
        first = bisect.bisect_right(self._ends, t1)
        for index in range(first, len(self._starts)):
            start, end, bits = self._starts[index], self._ends[index], self._bits[index]
            if start >= t2:
                break
            if as_of is not None:
                if start >= as_of:
                    break
                if end > as_of:
                    bits = self._bits_before(index, as_of)
                    end = as_of
            duration = end - start
            overlap = min(end, t2) - max(start, t1)
            if duration <= 0 or overlap <= 0:
                continue
            total_bits += bits * overlap / duration
            total_time += overlap
        if total_time <= 0:
            return None
        return total_bits / total_time


def measure_throughput(meter: ThroughputMeter, t1: float, t2: float) -> float | None:
    """Average throughput of the meter over [t1, t2], excluding idle time."""
    return meter.measure(t1, t2)


def buffer_level(
    completions: list[tuple[float, float]], t: float, tau: float
) -> float | None:
    """
    Playback buffer at time t: latest deadline among segments completed by t, plus tau, minus t.

    Args:
        completions: (completion time, playback deadline) of successful downloads
        t: Query time
        tau: Segment duration

    Returns:
        Buffer level in seconds (non-positive when playback ran dry), or None
        before the first completion
    """
    deadlines = [t_p for t_c, t_p in completions if t_c <= t]
    if not deadlines:
        return None
    return max(deadlines) + tau - t


@dataclass
class SimConfig:  # pylint: disable=too-many-instance-attributes
    """
    Validated session configuration.

    The session covers trace time [tune_in_time_s, tune_in_time_s + session_length_s].
    """

    session_length_s: float = 300.0
    tune_in_time_s: float = 10.0
    algorithm: str = "lolypop"
    params: dict[str, Any] | None = None
    predictor: str = "SMA:1:ar"
    t_max: int = 10
    rho_min: float = DEFAULT_RHO_MIN
    min_samples: int = DEFAULT_MIN_SAMPLES
    age_window_s: float | None = None
    tau: float = 2.0
    delta_p: float = 5.0
    rates: tuple[float, ...] = DEFAULT_LADDER_BPS
    variation_cv: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.session_length_s <= 0:
            raise ValueError(
                f"session_length_s must be positive, got {self.session_length_s}"
            )
        if self.tune_in_time_s < 0:
            raise ValueError(f"tune_in_time_s must be >= 0, got {self.tune_in_time_s}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"Unknown algorithm '{self.algorithm}', expected one of {ALGORITHMS}"
            )
        PredictorSpec.parse(self.predictor)
        Timeline(self.tau, self.delta_p)
        if self.t_max < self.delta_p - self.tau:
            raise ValueError(
                f"t_max={self.t_max} must cover the transport budget "
                f"delta_p - tau = {self.delta_p - self.tau}"
            )
        if self.params is None:
            self.params = dict(DEFAULT_PARAMS[self.algorithm])
        self.rates = tuple(float(r) for r in self.rates)
        # surfaces parameter errors at load time rather than per session
        self.create_algorithm()

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SimConfig":
        """
        Build a config from a mapping, using defaults for absent keys.

        Raises:
            ValueError: On unknown keys or invalid values
        """
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"Unknown simulation config fields: {unknown}")
        values = dict(raw)
        if "rates" in values:
            values["rates"] = tuple(values["rates"])
        if values.get("params") is None:
            values.pop("params", None)
        try:
            return cls(**values)
        except TypeError as e:
            raise ValueError(f"Invalid simulation config: {e}") from e

    @classmethod
    def from_yaml(cls, filepath: Path) -> "SimConfig":
        """
        Load a session configuration from a YAML or JSON file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the file is empty or values are invalid
        """
        if not filepath.exists():
            raise FileNotFoundError(f"Configuration file not found: {filepath}")
        with open(filepath, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
        if raw is None:
            raise ValueError("Configuration file is empty or invalid")
        if not isinstance(raw, dict):
            raise ValueError(f"Configuration file {filepath} must contain a mapping")
        return cls.from_dict(raw)

    @property
    def predictor_spec(self) -> PredictorSpec:
        return PredictorSpec.parse(self.predictor)

    def timeline(self) -> Timeline:
        return Timeline(self.tau, self.delta_p)

    def segments_needed(self) -> int:
        """Catalog length covering every segment playable within the session."""
        session_end = self.tune_in_time_s + self.session_length_s
        return max(1, math.floor((session_end - self.delta_p) / self.tau) + 1)

    def catalog(self) -> MediaCatalog:
        return build_synthetic_catalog(
            self.rates, self.segments_needed(), self.tau, self.variation_cv, self.seed
        )

    def estimator_settings(self) -> dict[str, Any]:
        return {
            "t_max": self.t_max,
            "rho_min": self.rho_min,
            "min_samples": self.min_samples,
            "age_window_s": self.age_window_s,
        }

    def create_algorithm(self) -> AdaptationAlgorithm:
        estimator = self.estimator_settings() if self.algorithm == "lolypop" else None
        return create_algorithm(self.algorithm, self.params, estimator)

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["rates"] = list(self.rates)
        return values


@dataclass(frozen=True)
class SegmentEvent:  # pylint: disable=too-many-instance-attributes
    """One row of the per-segment event log."""

    segment: int
    repr: int | None
    t_r: float | None
    t_c: float | None
    t_p: float
    skipped: bool
    forced: bool
    omega_at_request: float | None
    j_prev: int | None
    size_bits: float | None
    bits_delivered: float
    buffer_at_deadline: float


EVENT_COLUMNS = [name for name in SegmentEvent.__dataclass_fields__]


@dataclass
class SessionReport:  # pylint: disable=too-many-instance-attributes
    """Outcome of one streaming session."""

    trace_id: str
    algorithm: str
    parameters: dict[str, Any]
    sigma: float
    omega: float
    mean_repr: float | None
    mean_mmbr: float | None
    startup_delay_s: float | None
    wasted_bits: float
    n_played: int
    n_skipped: int
    n_elapsed: int
    first_segment: int | None
    tau: float = 2.0
    session_start_s: float = 0.0
    session_end_s: float = 0.0
    events: list[SegmentEvent] = field(default_factory=list)
    buffer_series: list[tuple[int, float | None]] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        """Flat summary without the event log and buffer series."""
        return {
            "trace_id": self.trace_id,
            "algorithm": self.algorithm,
            "sigma": self.sigma,
            "omega": self.omega,
            "mean_repr": self.mean_repr,
            "mean_mmbr": self.mean_mmbr,
            "startup_delay_s": self.startup_delay_s,
            "wasted_bits": self.wasted_bits,
            "n_played": self.n_played,
            "n_skipped": self.n_skipped,
            "n_elapsed": self.n_elapsed,
        }

    def to_dict(self) -> dict[str, Any]:
        data = self.summary()
        data["parameters"] = dict(self.parameters)
        data["first_segment"] = self.first_segment
        data["tau"] = self.tau
        data["session_start_s"] = self.session_start_s
        data["session_end_s"] = self.session_end_s
        data["events"] = [asdict(event) for event in self.events]
        data["buffer_series"] = [
            {"t": t, "buffer_s": level} for t, level in self.buffer_series
        ]
        return data

    def events_frame(self) -> pd.DataFrame:
        """Event log as a table with one row per segment."""
        return pd.DataFrame([asdict(e) for e in self.events], columns=EVENT_COLUMNS)


@dataclass
class _SegmentState:
    segment: int
    repr: int | None = None
    t_r: float | None = None
    t_c: float | None = None
    skipped: bool = False
    forced: bool = False
    omega_at_request: float | None = None
    j_prev: int | None = None
    size_bits: float | None = None
    bits_delivered: float = 0.0


class SessionEngine:  # pylint: disable=too-many-instance-attributes
    """
    Runs one streaming session over a trace.

    Holds the mutable session state: meter, error history, prediction
    records and quality accounting. One instance serves one session.
    """

    def __init__(
        self,
        trace: ThroughputTrace,
        catalog: MediaCatalog,
        timeline: Timeline,
        config: SimConfig,
    ):
        if abs(catalog.tau - timeline.tau) > _TIME_EPS:
            raise ValueError(
                f"Catalog tau {catalog.tau} differs from timeline tau {timeline.tau}"
            )
        budget = timeline.delta_p - timeline.tau
        if config.t_max < budget - _TIME_EPS:
            raise ValueError(
                f"t_max={config.t_max} must cover the transport budget "
                f"delta_p - tau = {budget} of the catalog timeline"
            )
        self.session_start = config.tune_in_time_s
        self.session_end = config.tune_in_time_s + config.session_length_s
        if self.session_end > trace.duration + _TIME_EPS:
            raise ValueError(
                f"Session [{self.session_start}, {self.session_end}] s does not fit in "
                f"trace '{trace.trace_id}' of {trace.duration} s"
            )
        last_segment = math.floor((self.session_end - timeline.delta_p) / timeline.tau)
        if last_segment >= catalog.n_segments:
            raise ValueError(
                f"Catalog has {catalog.n_segments} segments, session needs {last_segment + 1}"
            )

        self.trace = trace
        self.catalog = catalog
        self.timeline = timeline
        self.config = config
        self.predictor = config.predictor_spec
        self.algorithm = config.create_algorithm()

        self.meter = ThroughputMeter(trace)
        self.history = ErrorHistory(config.age_window_s, config.rho_min, config.min_samples)
        self.predictions: dict[tuple[int, int], PredictionRecord] = {}
        self._next_tick = max(1, math.ceil(self.session_start - _TIME_EPS))

        self._segments: list[_SegmentState] = []
        self._completions: list[tuple[float, float]] = []
        self._played_reprs: list[int] = []
        # last played representation outside tune-in; tune-in segments never move it
        self._reference_repr: int | None = None
        self._transitions = 0
        self.wasted_bits = 0.0

    @property
    def omega(self) -> float:
        """Transitions divided by successful segments.

        A transition is a played segment whose representation differs from the
        last played segment outside tune-in. Tune-in segments count in the
        denominator only.
        """
        if not self._played_reprs:
            return 0.0
        return self._transitions / len(self._played_reprs)

    @property
    def j_prev(self) -> int | None:
        """Representation of the last played segment that was not a tune-in."""
        return self._reference_repr

    def _meter_view(self, as_of: float) -> MeterView:
        def view(t1: float, t2: float) -> float | None:
            return self.meter.measure(t1, t2, as_of=as_of)

        return view

    def _tick(self, second: int) -> None:
        view = self._meter_view(second)
        t_max = self.config.t_max
        for T in range(1, t_max + 1):
            record = self.predictions.get((second - T, T))
            if record is None or record.rho_hat is None:
                continue
            measured = view(second - T, second)
            if measured is None:
                continue
            error = signed_rel_error(record.rho_hat, measured, self.config.rho_min)
            self.history.record(second, T, error)

        for record in predict_all_scales(view, second, self.predictor, t_max):
            self.predictions[(record.t, record.T)] = record
        stale = second - 2 * t_max - 1
        for key in [key for key in self.predictions if key[0] < stale]:
            del self.predictions[key]

    def advance_to(self, t: float) -> None:
        """Process every integer second up to and including t."""
        if not self.algorithm.uses_predictions:
            return
        while self._next_tick <= t + _TIME_EPS:
            self._tick(self._next_tick)
            self._next_tick += 1

    def success_probabilities(
        self, segment: int, t_r: float, t_p: float
    ) -> tuple[float, ...]:
        """Per-representation probability of finishing before t_p, or -1 sentinels."""
        n = self.catalog.n_representations
        interval = select_prediction_interval(
            self.predictions, t_r, t_p, self.config.t_max
        )
        if interval is None:
            return (UNAVAILABLE,) * n
        record = self.predictions[interval]
        return tuple(
            success_probability(self.history, record, size, t_r, t_p, now=t_r)
            for size in self.catalog.sizes_of(segment)
        )

    def _request(
        self, state: _SegmentState, t_r: float, forced: bool
    ) -> DownloadOutcome:
        segment = state.segment
        t_p = self.timeline.deadline(segment)
        state.t_r = t_r
        state.forced = forced
        state.omega_at_request = self.omega
        state.j_prev = self.j_prev

        if forced:
            j = 0
        else:
            if self.algorithm.uses_predictions:
                p_success = self.success_probabilities(segment, t_r, t_p)
            else:
                p_success = (UNAVAILABLE,) * self.catalog.n_representations
            view = SelectionView(
                segment=segment,
                t_r=t_r,
                t_p=t_p,
                omega_t=self.omega,
                j_prev=self.j_prev,
                rates=self.catalog.representations,
                sizes=self.catalog.sizes_of(segment),
                p_success=p_success,
            )
            j = self.algorithm.select(view)
            if not 0 <= j < self.catalog.n_representations:
                raise ContractViolation(f"Algorithm selected invalid representation {j}")

        size = self.catalog.size(segment, j)
        outcome = simulate_download(self.trace, t_r, size, t_p)
        self.meter.add_outcome(outcome)
        state.repr = j
        state.size_bits = size
        state.bits_delivered = outcome.bits_delivered

        throughput = None
        if outcome.completed:
            state.t_c = outcome.t_end
            self._completions.append((outcome.t_end, t_p))
            if not forced:
                if self._reference_repr is not None and self._reference_repr != j:
                    self._transitions += 1
                self._reference_repr = j
            self._played_reprs.append(j)
            if outcome.t_end > t_r:
                throughput = size / (outcome.t_end - t_r)
        else:
            state.skipped = True
            self.wasted_bits += outcome.bits_delivered
        self.algorithm.record(j, forced, throughput)

        logger.debug(
            "Segment %d: repr=%d t_r=%.3f t_p=%.3f %s",
            segment,
            j,
            t_r,
            t_p,
            f"done at {outcome.t_end:.3f}" if outcome.completed else "aborted",
        )
        return outcome

    def run(self) -> SessionReport:
        """Execute the session and build its report."""
        tau = self.timeline.tau
        delta_p = self.timeline.delta_p
        segment, t_r = next_tune_in(self.session_start, tau, delta_p)
        first_segment = segment
        first_request = t_r
        forced = True

        while self.timeline.deadline(segment) <= self.session_end + _TIME_EPS:
            state = _SegmentState(segment)
            self._segments.append(state)
            t_p = self.timeline.deadline(segment)
            self.advance_to(t_r)

            if t_p <= t_r:
                state.skipped = True
                logger.debug("Segment %d: deadline passed before request", segment)
                resume, t_r = next_tune_in(t_r, tau, delta_p)
                self._skip_range(segment + 1, resume)
                segment, forced = resume, True
                continue

            outcome = self._request(state, t_r, forced)
            if outcome.completed:
                segment += 1
                t_r = max(outcome.t_end, self.timeline.availability(segment))
                forced = False
            else:
                resume, t_r = next_tune_in(t_p, tau, delta_p)
                self._skip_range(segment + 1, resume)
                segment, forced = resume, True

        return self._build_report(first_segment, first_request)

    def _skip_range(self, first: int, stop: int) -> None:
        for segment in range(first, stop):
            if self.timeline.deadline(segment) > self.session_end + _TIME_EPS:
                break
            self._segments.append(_SegmentState(segment, skipped=True))

    def _buffer_at_deadline(self, state: _SegmentState) -> float:
        if state.skipped:
            return 0.0
        t_p = self.timeline.deadline(state.segment)
        level = buffer_level(self._completions, t_p, self.timeline.tau)
        return 0.0 if level is None else max(0.0, level)

    def _build_report(self, first_segment: int, first_request: float) -> SessionReport:
        events = [
            SegmentEvent(
                segment=state.segment,
                repr=state.repr,
                t_r=state.t_r,
                t_c=state.t_c,
                t_p=self.timeline.deadline(state.segment),
                skipped=state.skipped,
                forced=state.forced,
                omega_at_request=state.omega_at_request,
                j_prev=state.j_prev,
                size_bits=state.size_bits,
                bits_delivered=state.bits_delivered,
                buffer_at_deadline=self._buffer_at_deadline(state),
            )
            for state in self._segments
        ]
        played = [e for e in events if not e.skipped]
        n_skipped = len(events) - len(played)

        mean_repr = None
        mean_mmbr = None
        if played:
            mean_repr = float(np.mean([e.repr for e in played]))
            mean_mmbr = float(np.mean([e.size_bits for e in played])) / self.catalog.tau

        startup_delay = None
        if events and events[0].segment == first_segment and not events[0].skipped:
            startup_delay = self.timeline.deadline(first_segment) - first_request

        buffer_series: list[tuple[int, float | None]] = []
        for second in range(
            math.ceil(self.session_start - _TIME_EPS),
            math.floor(self.session_end + _TIME_EPS) + 1,
        ):
            level = buffer_level(self._completions, second, self.timeline.tau)
            buffer_series.append((second, None if level is None else max(0.0, level)))

        report = SessionReport(
            trace_id=self.trace.trace_id,
            algorithm=self.algorithm.label,
            parameters=dict(self.config.params or {}),
            sigma=n_skipped / len(events) if events else 0.0,
            omega=self.omega,
            mean_repr=mean_repr,
            mean_mmbr=mean_mmbr,
            startup_delay_s=startup_delay,
            wasted_bits=self.wasted_bits,
            n_played=len(played),
            n_skipped=n_skipped,
            n_elapsed=len(events),
            first_segment=first_segment if events else None,
            tau=self.timeline.tau,
            session_start_s=self.session_start,
            session_end_s=self.session_end,
            events=events,
            buffer_series=buffer_series,
        )
        logger.debug(
            "Session on %s with %s: sigma=%.4f omega=%.4f played=%d skipped=%d",
            report.trace_id,
            report.algorithm,
            report.sigma,
            report.omega,
            report.n_played,
            report.n_skipped,
        )
        return report


def run_session(
    trace: ThroughputTrace,
    catalog: MediaCatalog,
    timeline: Timeline,
    config: SimConfig,
) -> SessionReport:
    """
    Simulate one session and return its report.

    Raises:
        ValueError: If the session does not fit in the trace or catalog
    """
    return SessionEngine(trace, catalog, timeline, config).run()
