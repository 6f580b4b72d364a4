"""
Sweep orchestration: configuration grids, parallel sessions, result tables.

Sessions are independent, so (configuration, trace) pairs run in a process
pool with nothing shared; results are sorted by key before they are
written, making the output independent of execution order.
"""

import logging
from collections.abc import Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import yaml

from ..streaming.adaptation import ALGORITHMS, ContractViolation
from ..streaming.engine import SimConfig, run_session
from ..streaming.traces import (
    ThroughputTrace,
    TraceError,
    discover_traces,
    filter_by_cv,
    load_trace,
)
from .analysis import (
    DEFAULT_OMEGA_THRESHOLDS,
    DEFAULT_SIGMA_GRID,
    MEAN_ROW_ID,
    STATUS_ERROR,
    STATUS_OK,
)
from .output import ensure_dir, read_table, write_json, write_table

logger = logging.getLogger(__name__)

LOLYPOP_SIGMA_STAR: tuple[float, ...] = (
    0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.1, 0.15, 0.2, 0.25, 0.3,
    0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
)  # fmt: skip
LOLYPOP_OMEGA_STAR: tuple[float, ...] = (
    0.001, 0.005, 0.008, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09,
    0.1, 0.15, 0.2, 0.3, 0.5,
)  # fmt: skip
FESTIVE_ALPHA: tuple[float, ...] = tuple(float(a) for a in range(5, 21))
FESTIVE_P: tuple[float, ...] = (
    0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
)  # fmt: skip
FESTIVE_K: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 30, 40, 50)

METRIC_COLUMNS = [
    "sigma",
    "omega",
    "mean_repr",
    "mean_mmbr",
    "startup_delay_s",
    "wasted_bits",
    "n_played",
    "n_skipped",
    "n_elapsed",
]
PARAM_COLUMNS = ["sigma_star", "omega_star", "alpha", "p", "k"]
STRING_COLUMNS = ("config_id", "algorithm", "label", "trace_id", "status", "error")
RESULT_COLUMNS = (
    ["config_id", "algorithm", "label", "trace_id", "status", "error"]
    + PARAM_COLUMNS
    + METRIC_COLUMNS
    + ["n_traces"]
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One algorithm configuration of a sweep."""

    config_id: str
    algorithm: str
    params: dict[str, Any] = field(default_factory=dict)


def _float_list(raw: dict[str, Any], name: str, default: tuple[float, ...]) -> list[float]:
    values = raw.get(name, list(default))
    if not isinstance(values, list) or not values:
        raise ValueError(f"{name} must be a non-empty list, got: {values}")
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError) as e:
        raise ValueError(f"{name} must contain numbers, got: {values}") from e


@dataclass
class SweepSpec:  # pylint: disable=too-many-instance-attributes
    """
    Validated sweep specification.

    Defaults reproduce the full LOLYPOP (26 x 17) and FESTIVE (16 x 12 x 15)
    grids over the default session configuration.
    """

    algorithms: list[str] = field(default_factory=lambda: ["lolypop", "festive"])
    sigma_star: list[float] = field(default_factory=lambda: list(LOLYPOP_SIGMA_STAR))
    omega_star: list[float] = field(default_factory=lambda: list(LOLYPOP_OMEGA_STAR))
    festive_alpha: list[float] = field(default_factory=lambda: list(FESTIVE_ALPHA))
    festive_p: list[float] = field(default_factory=lambda: list(FESTIVE_P))
    festive_k: list[int] = field(default_factory=lambda: list(FESTIVE_K))
    festive_bw_window: int = 20
    sim: SimConfig = field(default_factory=SimConfig)
    traces: str | None = None
    output_dir: str = "results"
    workers: int = 1
    cv_threshold: float | None = None
    sigma_grid: list[float] = field(default_factory=lambda: list(DEFAULT_SIGMA_GRID))
    omega_thresholds: list[float] = field(
        default_factory=lambda: list(DEFAULT_OMEGA_THRESHOLDS)
    )

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SweepSpec":
        """
        Build a spec from a mapping, using defaults for absent keys.

        Raises:
            ValueError: If fields are unknown or invalid
        """
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"Unknown sweep spec fields: {unknown}")

        algorithms = raw.get("algorithms", ["lolypop", "festive"])
        if isinstance(algorithms, str):
            algorithms = [algorithms]
        if not isinstance(algorithms, list) or not algorithms:
            raise ValueError(f"algorithms must be a non-empty list, got: {algorithms}")
        invalid = [name for name in algorithms if name not in ALGORITHMS]
        if invalid:
            raise ValueError(f"Unknown algorithms {invalid}, expected any of {ALGORITHMS}")

        workers = raw.get("workers", 1)
        if not isinstance(workers, int) or workers <= 0:
            raise ValueError(f"workers must be a positive integer, got: {workers}")

        festive_k = raw.get("festive_k", list(FESTIVE_K))
        if not isinstance(festive_k, list) or not all(
            isinstance(k, int) and k >= 1 for k in festive_k
        ):
            raise ValueError(f"festive_k must be a list of integers >= 1, got: {festive_k}")

        sim_raw = raw.get("sim") or {}
        if not isinstance(sim_raw, dict):
            raise ValueError(f"sim must be a mapping, got: {sim_raw}")

        cv_threshold = raw.get("cv_threshold")
        return cls(
            algorithms=list(algorithms),
            sigma_star=_float_list(raw, "sigma_star", LOLYPOP_SIGMA_STAR),
            omega_star=_float_list(raw, "omega_star", LOLYPOP_OMEGA_STAR),
            festive_alpha=_float_list(raw, "festive_alpha", FESTIVE_ALPHA),
            festive_p=_float_list(raw, "festive_p", FESTIVE_P),
            festive_k=list(festive_k),
            festive_bw_window=int(raw.get("festive_bw_window", 20)),
            sim=SimConfig.from_dict(sim_raw),
            traces=raw.get("traces"),
            output_dir=raw.get("output_dir", "results"),
            workers=workers,
            cv_threshold=None if cv_threshold is None else float(cv_threshold),
            sigma_grid=_float_list(raw, "sigma_grid", DEFAULT_SIGMA_GRID),
            omega_thresholds=_float_list(raw, "omega_thresholds", DEFAULT_OMEGA_THRESHOLDS),
        )

    @classmethod
    def from_yaml(cls, filepath: Path) -> "SweepSpec":
        """
        Load and validate a sweep spec from a YAML or JSON file.

        Raises:
            FileNotFoundError: If the sweep spec file doesn't exist
            ValueError: If the file is empty or fields are invalid
        """
        if not filepath.exists():
            raise FileNotFoundError(f"Sweep spec not found: {filepath}")

        with open(filepath, encoding="utf-8") as f:
            try:
                raw = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ValueError(f"Sweep spec {filepath} is not valid YAML/JSON: {e}") from e

        if raw is None:
            raise ValueError("Sweep spec is empty or invalid")
        if not isinstance(raw, dict):
            raise ValueError(f"Sweep spec {filepath} must contain a mapping")
        return cls.from_dict(raw)

    def configurations(self) -> list[ExperimentConfig]:
        """All algorithm configurations, numbered per algorithm in grid order."""
        configs: list[ExperimentConfig] = []
        for algorithm in self.algorithms:
            if algorithm == "lolypop":
                grid: Iterable[dict[str, Any]] = (
                    {"sigma_star": s, "omega_star": o}
                    for s, o in product(self.sigma_star, self.omega_star)
                )
            elif algorithm == "festive":
                grid = (
                    {"alpha": a, "p": p, "k": k, "bw_window": self.festive_bw_window}
                    for a, p, k in product(self.festive_alpha, self.festive_p, self.festive_k)
                )
            else:
                grid = [{}]
            configs.extend(
                ExperimentConfig(f"{algorithm}-{n:04d}", algorithm, params)
                for n, params in enumerate(grid, start=1)
            )
        return configs

    def to_dict(self) -> dict[str, Any]:
        return {
            "algorithms": self.algorithms,
            "sigma_star": self.sigma_star,
            "omega_star": self.omega_star,
            "festive_alpha": self.festive_alpha,
            "festive_p": self.festive_p,
            "festive_k": self.festive_k,
            "festive_bw_window": self.festive_bw_window,
            "sim": self.sim.to_dict(),
            "traces": self.traces,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "cv_threshold": self.cv_threshold,
            "sigma_grid": self.sigma_grid,
            "omega_thresholds": self.omega_thresholds,
        }


@dataclass(frozen=True)
class _Task:
    config: ExperimentConfig
    sim: SimConfig
    trace_id: str
    trace: ThroughputTrace | None
    load_error: str | None


def _run_task(task: _Task) -> dict[str, Any]:
    """Run one session; failures become an error row."""
    row: dict[str, Any] = {
        "config_id": task.config.config_id,
        "algorithm": task.config.algorithm,
        "label": task.config.algorithm,
        "trace_id": task.trace_id,
        "status": STATUS_OK,
        "error": "",
        "n_traces": 1,
    }
    for name in PARAM_COLUMNS:
        row[name] = task.config.params.get(name)

    if task.trace is None:
        row["status"] = STATUS_ERROR
        row["error"] = task.load_error or "trace unavailable"
        return row
    try:
        sim = replace(task.sim, algorithm=task.config.algorithm, params=task.config.params)
        report = run_session(task.trace, sim.catalog(), sim.timeline(), sim)
    except (TraceError, ValueError, OSError, ContractViolation) as e:
        row["status"] = STATUS_ERROR
        row["error"] = str(e)
        return row
    row["label"] = report.algorithm
    for name in METRIC_COLUMNS:
        row[name] = getattr(report, name)
    return row


def aggregate_results(rows: list[dict[str, Any]]) -> pd.DataFrame:
    """
    Per-(config, trace) rows plus one mean-over-traces row per config, sorted.

    Means ignore failed sessions; a config with no successful session gets
    an error mean row.
    """
    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if table.empty:
        return table
    mean_rows = []
    for config_id, group in table.groupby("config_id", sort=True):
        ok = group[group["status"] == STATUS_OK]
        first = group.iloc[0]
        mean_row: dict[str, Any] = {
            "config_id": config_id,
            "algorithm": first["algorithm"],
            "label": ok.iloc[0]["label"] if len(ok) else first["label"],
            "trace_id": MEAN_ROW_ID,
            "status": STATUS_OK if len(ok) else STATUS_ERROR,
            "error": "" if len(ok) else "no successful session",
            "n_traces": len(ok),
        }
        for name in PARAM_COLUMNS:
            mean_row[name] = first[name]
        for name in METRIC_COLUMNS:
            values = pd.to_numeric(ok[name], errors="coerce")
            mean_row[name] = float(values.mean()) if values.notna().any() else np.nan
        mean_rows.append(mean_row)

    combined = pd.concat([table, pd.DataFrame(mean_rows, columns=RESULT_COLUMNS)])
    combined["_is_mean"] = combined["trace_id"] == MEAN_ROW_ID
    combined = combined.sort_values(
        ["config_id", "_is_mean", "trace_id"], kind="mergesort"
    ).drop(columns="_is_mean")
    return combined.reset_index(drop=True)


class ExperimentRunner:
    """
    Sweep orchestrator.

    Loads traces, expands the configuration grid, runs every
    (configuration, trace) session, and writes the aggregated tables.
    """

    def __init__(self, spec: SweepSpec, output_dir: Path | None = None):
        """
        Args:
            spec: Validated sweep specification
            output_dir: Overrides ``spec.output_dir`` when given
        """
        self.spec = spec
        self.output_dir = output_dir if output_dir is not None else Path(spec.output_dir)

    def load_traces(self, source: Path) -> list[tuple[str, ThroughputTrace | None, str | None]]:
        """
        Load every trace file under source.

        Returns:
            (trace_id, trace or None, load error or None) per file, sorted by id
        """
        loaded: list[tuple[str, ThroughputTrace | None, str | None]] = []
        good: list[ThroughputTrace] = []
        for path in discover_traces(source):
            try:
                trace = load_trace(path)
            except (TraceError, OSError) as e:
                logger.error("Error loading trace %s: %s", path, e)
                loaded.append((path.stem, None, str(e)))
                continue
            good.append(trace)

        if self.spec.cv_threshold is not None:
            good = filter_by_cv(good, self.spec.cv_threshold)
        loaded.extend((trace.trace_id, trace, None) for trace in good)
        return sorted(loaded, key=lambda item: item[0])

    def tasks(
        self, traces: list[tuple[str, ThroughputTrace | None, str | None]]
    ) -> list[_Task]:
        return [
            _Task(config, self.spec.sim, trace_id, trace, error)
            for config in self.spec.configurations()
            for trace_id, trace, error in traces
        ]

    def run_tasks(self, tasks: list[_Task]) -> list[dict[str, Any]]:
        if self.spec.workers == 1 or len(tasks) <= 1:
            return [_run_task(task) for task in tasks]
        chunksize = max(1, len(tasks) // (self.spec.workers * 8))
        with ProcessPoolExecutor(max_workers=self.spec.workers) as pool:
            return list(pool.map(_run_task, tasks, chunksize=chunksize))

    def run(self, traces: list[tuple[str, ThroughputTrace | None, str | None]]) -> pd.DataFrame:
        """Run the sweep over already-loaded traces and return the result table."""
        tasks = self.tasks(traces)
        logger.info(
            "Running %d sessions (%d configurations x %d traces) on %d worker(s)",
            len(tasks),
            len(self.spec.configurations()),
            len(traces),
            self.spec.workers,
        )
        rows = self.run_tasks(tasks)
        failed = sum(1 for row in rows if row["status"] != STATUS_OK)
        if failed:
            logger.warning("%d of %d sessions failed", failed, len(rows))
        return aggregate_results(rows)

    def write(self, results: pd.DataFrame) -> None:
        """Write results.csv and sweep.json into the output directory."""
        ensure_dir(self.output_dir)
        write_table(self.output_dir / "results.csv", results)
        write_json(
            self.output_dir / "sweep.json",
            {
                "spec": self.spec.to_dict(),
                "n_configurations": len(self.spec.configurations()),
                "n_rows": len(results),
                "n_failed": int((results["status"] != STATUS_OK).sum()) if len(results) else 0,
            },
        )

    def sweep(self, trace_source: Path) -> pd.DataFrame:
        """
        Execute the complete sweep and write its outputs.

        Raises:
            FileNotFoundError: If the trace source doesn't exist
        """
        logger.info("Loading traces from %s...", trace_source)
        traces = self.load_traces(trace_source)
        logger.info("Found %d traces", len(traces))
        results = self.run(traces)
        logger.info("Writing results to %s...", self.output_dir)
        self.write(results)
        logger.info("Sweep complete! %d result rows", len(results))
        return results


def run_sweep(spec: SweepSpec, trace_source: Path | None = None) -> pd.DataFrame:
    """
    Run every configuration of the sweep spec on every trace and return the result table.

    Args:
        spec: Sweep specification
        trace_source: Trace directory or file; defaults to ``spec.traces``

    Raises:
        ValueError: If no trace source is given
    """
    source = trace_source if trace_source is not None else spec.traces
    if source is None:
        raise ValueError("No trace source given (set 'traces' in the sweep spec or pass one)")
    runner = ExperimentRunner(spec)
    return runner.run(runner.load_traces(Path(source)))


def load_results(results_dir: Path) -> pd.DataFrame:
    """
    Read results.csv of a sweep output directory.

    Raises:
        FileNotFoundError: If the directory has no results.csv
    """
    return read_table(results_dir / "results.csv", STRING_COLUMNS)
