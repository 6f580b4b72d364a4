"""
Analysis of sweep results: operating regions, quality frontiers, and
integral comparison of frontier curves.

All functions are pure; they read result tables produced by the sweep and
return new tables.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy import integrate

from ..streaming.engine import SessionReport
from ..streaming.traces import ThroughputTrace

logger = logging.getLogger(__name__)

MEAN_ROW_ID = "mean-over-traces"
STATUS_OK = "ok"
STATUS_ERROR = "error"

DEFAULT_SIGMA_GRID: tuple[float, ...] = (
    0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1,
)  # fmt: skip
DEFAULT_OMEGA_THRESHOLDS: tuple[float, ...] = (
    0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
)  # fmt: skip
TRACKING_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
INTEGRAL_TOLERANCE = 1e-9
# slack when testing achieved values against grid thresholds
_FEASIBILITY_EPS = 1e-12

FRONTIER_COLUMNS = [
    "omega_threshold",
    "sigma",
    "quality",
    "hull_quality",
    "config_id",
    "achieved_sigma",
    "achieved_omega",
]


@dataclass(frozen=True)
class OperatingPoint:
    """Achieved (sigma, omega) and mean quality of one configuration."""

    sigma: float
    omega: float
    mean_quality: float
    config_id: str
    trace_id: str
    algorithm: str = ""


class Comparison(str, Enum):
    """Outcome of comparing two frontier integrals."""

    A_GREATER = "A-greater"
    B_GREATER = "B-greater"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


def select_rows(
    results: pd.DataFrame, trace_id: str = MEAN_ROW_ID, algorithm: str | None = None
) -> pd.DataFrame:
    """Successful rows for one trace id (the per-config means by default)."""
    if results.empty:
        return results
    rows = results[(results["trace_id"] == trace_id) & (results["status"] == STATUS_OK)]
    if algorithm is not None:
        rows = rows[rows["algorithm"] == algorithm]
    return rows.reset_index(drop=True)


def operating_region(
    results: pd.DataFrame, algorithm: str | None = None
) -> list[OperatingPoint]:
    """All per-config mean operating points, in table order, duplicates kept."""
    means = select_rows(results, MEAN_ROW_ID, algorithm)
    return [
        OperatingPoint(
            sigma=float(row.sigma),
            omega=float(row.omega),
            mean_quality=float(row.mean_repr),
            config_id=str(row.config_id),
            trace_id=str(row.trace_id),
            algorithm=str(row.algorithm),
        )
        for row in means.itertuples(index=False)
    ]


def operating_region_frame(points: Sequence[OperatingPoint]) -> pd.DataFrame:
    columns = ["algorithm", "config_id", "trace_id", "sigma", "omega", "mean_quality"]
    return pd.DataFrame(
        [
            [p.algorithm, p.config_id, p.trace_id, p.sigma, p.omega, p.mean_quality]
            for p in points
        ],
        columns=columns,
    )


def upper_hull(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """
    Vertices of the upper concave hull, left to right (monotone chain).

    Points on a hull edge are dropped.
    """
    ordered = sorted(set((float(x), float(y)) for x, y in points))
    hull: list[tuple[float, float]] = []
    for point in ordered:
        while len(hull) >= 2:
            (ox, oy), (ax, ay) = hull[-2], hull[-1]
            cross = (ax - ox) * (point[1] - oy) - (ay - oy) * (point[0] - ox)
            if cross < 0:
                break
            hull.pop()
        # equal x: keep the higher point only
        if hull and hull[-1][0] == point[0]:
            hull.pop()
        hull.append(point)
    return hull


def hull_values(
    points: Sequence[tuple[float, float]], xs: Sequence[float]
) -> np.ndarray:
    """Upper concave hull of points, linearly interpolated at xs."""
    hull = upper_hull(points)
    if not hull:
        return np.full(len(xs), np.nan)
    hx, hy = zip(*hull)
    return np.interp(np.asarray(xs, dtype=float), hx, hy)


def quality_frontier(
    results: pd.DataFrame,
    sigma_grid: Sequence[float] = DEFAULT_SIGMA_GRID,
    omega_thresholds: Sequence[float] = DEFAULT_OMEGA_THRESHOLDS,
    trace_id: str = MEAN_ROW_ID,
    algorithm: str | None = None,
) -> pd.DataFrame:
    """
    Best mean quality reachable within each (sigma, omega threshold) budget.

    For each omega threshold and sigma on the grid, picks the configuration
    with the highest mean quality among those with achieved sigma <= grid
    sigma and achieved omega <= threshold. Ties go to lower achieved sigma,
    then lower achieved omega, then config id. Grid points without a
    feasible configuration are absent. ``hull_quality`` is the upper
    concave hull of each threshold's curve evaluated at its grid points.
    """
    rows_in = select_rows(results, trace_id, algorithm)
    if rows_in.empty:
        return pd.DataFrame(columns=FRONTIER_COLUMNS)
    rows_in = rows_in[rows_in["mean_repr"].notna()]
    frontier_rows = []
    for threshold in sorted(omega_thresholds):
        curve = []
        for sigma in sorted(sigma_grid):
            feasible = rows_in[
                (rows_in["sigma"] <= sigma + _FEASIBILITY_EPS)
                & (rows_in["omega"] <= threshold + _FEASIBILITY_EPS)
            ]
            if feasible.empty:
                continue
            best = feasible.assign(_neg_quality=-feasible["mean_repr"]).sort_values(
                ["_neg_quality", "sigma", "omega", "config_id"], kind="mergesort"
            ).iloc[0]
            curve.append(
                {
                    "omega_threshold": threshold,
                    "sigma": sigma,
                    "quality": float(best["mean_repr"]),
                    "config_id": best["config_id"],
                    "achieved_sigma": float(best["sigma"]),
                    "achieved_omega": float(best["omega"]),
                }
            )
        if curve:
            hull = hull_values(
                [(point["sigma"], point["quality"]) for point in curve],
                [point["sigma"] for point in curve],
            )
            for point, value in zip(curve, hull):
                point["hull_quality"] = float(value)
        frontier_rows.extend(curve)
    logger.debug("Frontier for %s: %d points", algorithm or "all", len(frontier_rows))
    return pd.DataFrame(frontier_rows, columns=FRONTIER_COLUMNS)


def frontier_curve(
    frontier: pd.DataFrame, omega_threshold: float, column: str = "hull_quality"
) -> list[tuple[float, float]]:
    """(sigma, quality) points of one threshold's curve."""
    if frontier.empty:
        return []
    rows = frontier[np.isclose(frontier["omega_threshold"], omega_threshold)]
    return [(float(s), float(q)) for s, q in zip(rows["sigma"], rows[column])]


def _integral_over(
    curve: Sequence[tuple[float, float]], lo: float, hi: float
) -> float:
    xs = np.array([x for x, _ in curve], dtype=float)
    ys = np.array([y for _, y in curve], dtype=float)
    order = np.argsort(xs, kind="mergesort")
    xs, ys = xs[order], ys[order]
    inside = (xs > lo) & (xs < hi)
    grid = np.concatenate(([lo], xs[inside], [hi]))
    return float(integrate.trapezoid(np.interp(grid, xs, ys), grid))


def integral_compare(
    curve_a: Sequence[tuple[float, float]],
    curve_b: Sequence[tuple[float, float]],
    tolerance: float = INTEGRAL_TOLERANCE,
) -> Comparison:
    """
    Compare trapezoidal integrals of two curves over their common sigma range.

    Returns INCOMPARABLE when the ranges do not overlap in an interval.
    """
    if len(curve_a) < 2 or len(curve_b) < 2:
        return Comparison.INCOMPARABLE
    lo = max(min(x for x, _ in curve_a), min(x for x, _ in curve_b))
    hi = min(max(x for x, _ in curve_a), max(x for x, _ in curve_b))
    if lo >= hi:
        return Comparison.INCOMPARABLE
    integral_a = _integral_over(curve_a, lo, hi)
    integral_b = _integral_over(curve_b, lo, hi)
    if abs(integral_a - integral_b) <= tolerance:
        return Comparison.EQUAL
    return Comparison.A_GREATER if integral_a > integral_b else Comparison.B_GREATER


def compare_frontiers(
    results: pd.DataFrame,
    algorithm_a: str,
    algorithm_b: str,
    sigma_grid: Sequence[float] = DEFAULT_SIGMA_GRID,
    omega_thresholds: Sequence[float] = DEFAULT_OMEGA_THRESHOLDS,
    per_trace: bool = False,
) -> pd.DataFrame:
    """
    Integral comparison of two algorithms' hull curves per omega threshold.

    With ``per_trace`` the frontiers are built from each trace's own rows
    instead of the means over traces.
    """
    if results.empty:
        trace_ids = []
    elif per_trace:
        trace_ids = sorted(set(results["trace_id"]) - {MEAN_ROW_ID})
    else:
        trace_ids = [MEAN_ROW_ID]

    rows = []
    for trace_id in trace_ids:
        frontier_a = quality_frontier(
            results, sigma_grid, omega_thresholds, trace_id, algorithm_a
        )
        frontier_b = quality_frontier(
            results, sigma_grid, omega_thresholds, trace_id, algorithm_b
        )
        for threshold in sorted(omega_thresholds):
            curve_a = frontier_curve(frontier_a, threshold)
            curve_b = frontier_curve(frontier_b, threshold)
            rows.append(
                {
                    "trace_id": trace_id,
                    "omega_threshold": threshold,
                    "a": algorithm_a,
                    "b": algorithm_b,
                    "n_points_a": len(curve_a),
                    "n_points_b": len(curve_b),
                    "outcome": integral_compare(curve_a, curve_b).value,
                }
            )
    columns = ["trace_id", "omega_threshold", "a", "b", "n_points_a", "n_points_b", "outcome"]
    return pd.DataFrame(rows, columns=columns)


def target_tracking(results: pd.DataFrame) -> pd.DataFrame:
    """
    Quantiles over traces of achieved sigma and omega per LOLYPOP configuration.

    Shows how closely the achieved operating points follow sigma_star and
    omega_star.
    """
    columns = ["config_id", "sigma_star", "omega_star"] + [
        f"{metric}_q{q:g}" for metric in ("sigma", "omega") for q in TRACKING_QUANTILES
    ]
    if results.empty:
        return pd.DataFrame(columns=columns)
    per_trace = results[
        (results["trace_id"] != MEAN_ROW_ID)
        & (results["status"] == STATUS_OK)
        & (results["algorithm"] == "lolypop")
    ]
    rows = []
    for config_id, group in per_trace.groupby("config_id", sort=True):
        row: dict[str, object] = {
            "config_id": config_id,
            "sigma_star": float(group["sigma_star"].iloc[0]),
            "omega_star": float(group["omega_star"].iloc[0]),
        }
        for metric in ("sigma", "omega"):
            values = group[metric].to_numpy(dtype=float)
            for q in TRACKING_QUANTILES:
                row[f"{metric}_q{q:g}"] = float(np.quantile(values, q))
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


@dataclass
class ExampleRun:
    """Plot-ready series of one session."""

    throughput: pd.DataFrame
    representations: pd.DataFrame
    buffer: pd.DataFrame


def emit_example_run(report: SessionReport, trace: ThroughputTrace) -> ExampleRun:
    """
    Three aligned series of one session.

    - throughput: per second, the trace rate and the MMBR of the segment
      playing at that second (empty when nothing plays)
    - representations: per segment, the selected representation (empty for
      skipped segments) and the running mean over played segments
    - buffer: per segment, the buffer level at its playback deadline (0 for
      skipped segments)
    """
    playing: dict[int, float] = {}
    for event in report.events:
        if event.skipped or event.size_bits is None:
            continue
        mmbr = event.size_bits / report.tau
        start = int(np.ceil(event.t_p - 1e-9))
        for second in range(start, int(np.ceil(event.t_p + report.tau - 1e-9))):
            playing[second] = mmbr

    throughput_rows = []
    if report.events:
        first = int(np.ceil(report.session_start_s - 1e-9))
        last = min(int(np.floor(report.session_end_s + 1e-9)), trace.duration)
        for second in range(first, last):
            throughput_rows.append(
                {
                    "t": second,
                    "trace_rate": float(trace.samples[second]),
                    "segment_mmbr": playing.get(second),
                }
            )

    repr_rows = []
    played: list[int] = []
    for event in report.events:
        repr_value = None if event.skipped else event.repr
        if repr_value is not None:
            played.append(repr_value)
        repr_rows.append(
            {
                "segment": event.segment,
                "repr": repr_value,
                "running_mean": float(np.mean(played)) if played else None,
            }
        )

    buffer_rows = [
        {"segment": event.segment, "buffer_at_deadline": event.buffer_at_deadline}
        for event in report.events
    ]
    return ExampleRun(
        throughput=pd.DataFrame(
            throughput_rows, columns=["t", "trace_rate", "segment_mmbr"]
        ),
        representations=pd.DataFrame(
            repr_rows, columns=["segment", "repr", "running_mean"]
        ).astype({"repr": "Int64"}),
        buffer=pd.DataFrame(buffer_rows, columns=["segment", "buffer_at_deadline"]),
    )
