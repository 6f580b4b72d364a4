"""
Representation selection: LOLYPOP, the tune-in rule, and baselines.

Decision functions are pure. Mutable per-session state (FESTIVE history)
lives in the algorithm objects created once per session by
``create_algorithm``.
"""

import logging
import math
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .error_model import UNAVAILABLE

logger = logging.getLogger(__name__)

# slack for floating-point time comparisons in the tune-in rule
_TIME_EPS = 1e-9
FESTIVE_SWITCH_WINDOW = 10


class ContractViolation(RuntimeError):
    """Raised when an adaptation precondition does not hold (a simulator bug)."""


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class LolypopConfig:
    """LOLYPOP parameters and the estimator settings it relies on."""

    sigma_star: float
    omega_star: float
    t_max: int = 10
    rho_min: float = 10_000.0
    min_samples: int = 3
    age_window_s: float | None = None

    def __post_init__(self) -> None:
        _check_fraction("sigma_star", self.sigma_star)
        _check_fraction("omega_star", self.omega_star)
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")


@dataclass(frozen=True)
class DecisionContext:
    """Inputs of one LOLYPOP decision."""

    t_r: float
    t_p: float
    omega_t: float
    j_prev: int | None
    p_success: tuple[float, ...]


def lolypop_select(ctx: DecisionContext, cfg: LolypopConfig) -> int:
    """
    Pick the representation for the next segment.

    j' is the highest representation whose miss probability is at most
    sigma_star (0 if none). Upward moves beyond ``j_prev``, the last
    representation played outside tune-in, are blocked while Omega(t_r)
    exceeds omega_star; downward moves never are.

    Raises:
        ContractViolation: If the request is past its deadline or beyond
            the prediction horizon, or a probability is out of range
    """
    if not ctx.t_r < ctx.t_p:
        raise ContractViolation(f"Deadline {ctx.t_p} not after request {ctx.t_r}")
    if ctx.t_p > ctx.t_r + cfg.t_max + _TIME_EPS:
        raise ContractViolation(
            f"Deadline {ctx.t_p} beyond prediction horizon {cfg.t_max} s of {ctx.t_r}"
        )
    for p in ctx.p_success:
        if p != UNAVAILABLE and not 0.0 <= p <= 1.0:
            raise ContractViolation(f"Success probability {p} out of range")

    if all(p == UNAVAILABLE for p in ctx.p_success):
        return 0

    j_candidate = max(
        [0]
        + [
            j
            for j, p in enumerate(ctx.p_success)
            if p != UNAVAILABLE and 1.0 - p <= cfg.sigma_star
        ]
    )
    if ctx.omega_t <= cfg.omega_star:
        return j_candidate
    return min(j_candidate, ctx.j_prev if ctx.j_prev is not None else 0)


def tune_in(t: float, tau: float, delta_p: float) -> int:
    """
    Oldest published segment whose deadline is at least tau after t.

    i0 = min{i >= 0 : (i+1)*tau <= t and i*tau + delta_p >= t + tau}.

    Raises:
        ValueError: If delta_p < 2*tau (no segment can ever qualify), or no
            segment qualifies at time t
    """
    if delta_p < 2 * tau:
        raise ValueError(
            f"delta_p={delta_p} must be at least 2*tau={2 * tau} for tune-in"
        )
    lowest = max(0, math.ceil((t + tau - delta_p) / tau - _TIME_EPS))
    highest = math.floor(t / tau - 1 + _TIME_EPS)
    if lowest > highest:
        raise ValueError(f"No segment qualifies for tune-in at t={t}")
    return lowest


def next_tune_in(t: float, tau: float, delta_p: float) -> tuple[int, float]:
    """
    Earliest (segment, request time >= t) satisfying the tune-in rule.

    When no segment qualifies at t, the client waits for the next
    publication, at which point the newly published segment qualifies.
    """
    if delta_p < 2 * tau:
        raise ValueError(
            f"delta_p={delta_p} must be at least 2*tau={2 * tau} for tune-in"
        )
    segment = max(0, math.ceil((t + tau - delta_p) / tau - _TIME_EPS))
    available_at = (segment + 1) * tau
    if available_at <= t + _TIME_EPS:
        return segment, t
    return segment, available_at


@dataclass(frozen=True)
class FestiveConfig:
    """Parameters of the reconstructed FESTIVE baseline."""

    alpha: float = 12.0
    p: float = 0.85
    k: int = 4
    bw_window: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.bw_window < 1:
            raise ValueError(f"bw_window must be >= 1, got {self.bw_window}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


@dataclass
class FestiveState:
    """Selection and throughput history of one FESTIVE session."""

    bw_window: int = 20
    throughputs: deque[float] = field(default_factory=deque)
    selections: list[int] = field(default_factory=list)
    segments_since_up: int | None = None

    @property
    def j_cur(self) -> int:
        """Most recent selection (0 before the first)."""
        return self.selections[-1] if self.selections else 0

    def add_throughput(self, rate_bps: float) -> None:
        """Record the throughput of a completed segment download."""
        self.throughputs.append(rate_bps)
        while len(self.throughputs) > self.bw_window:
            self.throughputs.popleft()

    def add_selection(self, j: int) -> None:
        """Record a selection, tracking the distance to the last upward switch."""
        if self.selections and j > self.j_cur:
            self.segments_since_up = 1
        elif self.segments_since_up is not None:
            self.segments_since_up += 1
        self.selections.append(j)

    def recent_switches(self) -> int:
        """Switches among the last FESTIVE_SWITCH_WINDOW selections."""
        recent = self.selections[-FESTIVE_SWITCH_WINDOW:]
        return sum(1 for a, b in zip(recent, recent[1:]) if a != b)


def festive_select(
    state: FestiveState, rates: Sequence[float], cfg: FestiveConfig
) -> int:
    """
    Reconstructed FESTIVE decision, moving at most one step.

    The bandwidth estimate is the harmonic mean of recent segment
    throughputs; the target is the highest rate within p * estimate. A step
    toward the target is scored against staying with
    ``2**switches + alpha * |rate / (p * estimate) - 1|`` and ties keep the
    current representation. Upward steps wait k segments after the last one.
    """
    if not state.throughputs:
        return 0
    samples = np.asarray(state.throughputs, dtype=float)
    if np.any(samples <= 0):
        return 0
    estimate = len(samples) / float(np.sum(1.0 / samples))
    budget = cfg.p * estimate

    j_cur = min(state.j_cur, len(rates) - 1)
    j_target = max([0] + [j for j, rate in enumerate(rates) if rate <= budget])

    up_allowed = state.segments_since_up is None or state.segments_since_up >= cfg.k
    if j_target > j_cur and up_allowed:
        candidate = j_cur + 1
    elif j_target < j_cur:
        candidate = j_cur - 1
    else:
        return j_cur

    switches = state.recent_switches()

    def score(j: int) -> float:
        stability = 2.0 ** (switches + (1 if j != j_cur else 0))
        efficiency = abs(rates[j] / budget - 1.0)
        return stability + cfg.alpha * efficiency

    return candidate if score(candidate) < score(j_cur) else j_cur


def lowest_select(rates: Sequence[float]) -> int:
    """Always the lowest representation."""
    if len(rates) == 0:
        raise ValueError("Catalog has no representations")
    return 0


@dataclass(frozen=True)
class SelectionView:
    """What the session exposes to an algorithm for one decision."""

    segment: int
    t_r: float
    t_p: float
    omega_t: float
    j_prev: int | None
    rates: tuple[float, ...]
    sizes: tuple[float, ...]
    p_success: tuple[float, ...]


class AdaptationAlgorithm(Protocol):
    """Per-session adaptation algorithm."""

    name: str
    label: str
    uses_predictions: bool

    def select(self, view: SelectionView) -> int:
        """Choose a representation for the segment described by view."""
        ...  # pylint: disable=unnecessary-ellipsis

    def record(self, j: int, forced: bool, throughput_bps: float | None) -> None:
        """Observe the outcome of a segment request."""
        ...  # pylint: disable=unnecessary-ellipsis


class LolypopAlgorithm:
    """LOLYPOP adapter for the session engine."""

    name = "lolypop"
    label = "lolypop"
    uses_predictions = True

    def __init__(self, config: LolypopConfig):
        self.config = config

    def select(self, view: SelectionView) -> int:
        ctx = DecisionContext(
            t_r=view.t_r,
            t_p=view.t_p,
            omega_t=view.omega_t,
            j_prev=view.j_prev,
            p_success=view.p_success,
        )
        return lolypop_select(ctx, self.config)

    def record(self, j: int, forced: bool, throughput_bps: float | None) -> None:
        pass


class FestiveAlgorithm:
    """FESTIVE adapter; keeps the per-session selection/throughput history."""

    name = "festive"
    label = "festive (reconstructed baseline)"
    uses_predictions = False

    def __init__(self, config: FestiveConfig):
        self.config = config
        self.state = FestiveState(bw_window=config.bw_window)

    def select(self, view: SelectionView) -> int:
        return festive_select(self.state, view.rates, self.config)

    def record(self, j: int, forced: bool, throughput_bps: float | None) -> None:
        self.state.add_selection(j)
        if throughput_bps is not None:
            self.state.add_throughput(throughput_bps)


class LowestAlgorithm:
    """Lowest-quality baseline."""

    name = "lowest"
    label = "lowest"
    uses_predictions = False

    def select(self, view: SelectionView) -> int:
        return lowest_select(view.rates)

    def record(self, j: int, forced: bool, throughput_bps: float | None) -> None:
        pass


ALGORITHMS = ("lolypop", "festive", "lowest")


def create_algorithm(
    name: str,
    params: dict[str, Any] | None = None,
    estimator: dict[str, Any] | None = None,
) -> AdaptationAlgorithm:
    """
    Build a fresh algorithm instance from its selection string.

    Args:
        name: One of "lolypop", "festive", "lowest"
        params: Algorithm parameters (e.g. sigma_star/omega_star, alpha/p/k)
        estimator: Session-wide estimator settings shared with LOLYPOP
            (t_max, rho_min, min_samples, age_window_s)

    Raises:
        ValueError: On unknown algorithms or invalid parameters
    """
    params = dict(params or {})
    if name == "lolypop":
        missing = {"sigma_star", "omega_star"} - set(params)
        if missing:
            raise ValueError(f"lolypop requires parameters: {sorted(missing)}")
        return LolypopAlgorithm(LolypopConfig(**params, **(estimator or {})))
    if name == "festive":
        return FestiveAlgorithm(FestiveConfig(**params))
    if name == "lowest":
        if params:
            raise ValueError(f"lowest takes no parameters, got {sorted(params)}")
        return LowestAlgorithm()
    raise ValueError(f"Unknown algorithm '{name}', expected one of {ALGORITHMS}")
