"""
Shared test fixtures for the lowdelay-abr test suite.

Provides synthetic traces, small catalogs and session configurations so
individual test files do not need to rebuild these from scratch.
"""

# pylint: disable=redefined-outer-name
import numpy as np
import pytest

from lowdelay_abr.streaming.engine import SimConfig, build_synthetic_catalog
from lowdelay_abr.streaming.traces import (
    ThroughputTrace,
    bursty_trace,
    constant_trace,
    save_trace,
)

MBPS = 1e6
LADDER_MBPS = (1 * MBPS, 2 * MBPS, 4 * MBPS, 8 * MBPS, 16 * MBPS)


@pytest.fixture
def ladder():
    """Five-step ladder of 1, 2, 4, 8 and 16 Mbps."""
    return LADDER_MBPS


@pytest.fixture
def constant_10mbps():
    """Constant 10 Mbps trace of 120 seconds."""
    return constant_trace("const-10", 10 * MBPS, 120)


@pytest.fixture
def zero_trace():
    """Trace that never delivers a bit."""
    return constant_trace("zero", 0.0, 120)


@pytest.fixture
def bursty():
    """Seeded alternating high/low trace with noise."""
    return bursty_trace("bursty", 200, 12 * MBPS, 1.5 * MBPS, 20, 0.4, seed=7)


@pytest.fixture
def short_session():
    """Factory for SimConfig with a 100 s session starting at t=10."""

    def make(**overrides):
        values = {
            "session_length_s": 100.0,
            "tune_in_time_s": 10.0,
            "rates": LADDER_MBPS,
        }
        values.update(overrides)
        return SimConfig(**values)

    return make


@pytest.fixture
def small_catalog():
    """Constant-size catalog for the five-step ladder, 60 segments."""
    return build_synthetic_catalog(LADDER_MBPS, 60, 2.0)


@pytest.fixture
def trace_dir(tmp_path):
    """Directory of three 80-second trace files."""
    directory = tmp_path / "traces"
    rng = np.random.default_rng(3)
    for n in range(3):
        samples = rng.uniform(1 * MBPS, 12 * MBPS, size=80)
        save_trace(ThroughputTrace(f"trace-{n}", samples), directory / f"trace-{n}.txt")
    return directory


@pytest.fixture
def sweep_spec_file(tmp_path, trace_dir):
    """Sweep spec with two LOLYPOP configurations over trace_dir."""
    spec = tmp_path / "spec.yaml"
    spec.write_text(
        f"""\
algorithms: [lolypop]
sigma_star: [0.05]
omega_star: [0.1, 0.3]
traces: "{trace_dir.name}"
output_dir: "results"
sim:
  session_length_s: 60
  tune_in_time_s: 10
  rates: [1000000, 2000000, 4000000, 8000000]
"""
    )
    return spec

