"""
Trace-driven virtual-time simulator for low-delay HTTP adaptive live streaming.

This package replays recorded throughput traces against adaptation
algorithms (LOLYPOP, a FESTIVE reconstruction, and a lowest-quality
baseline) and analyses the resulting skip/transition/quality trade-offs.
"""

__version__ = "0.1.0"
__author__ = "John Mulder"

from .cli import main
from .experiments.core import ExperimentRunner, SweepSpec, run_sweep
from .streaming.engine import SessionEngine, SessionReport, SimConfig, run_session
from .streaming.traces import ThroughputTrace, load_trace

__all__ = [
    "main",
    "ExperimentRunner",
    "SweepSpec",
    "run_sweep",
    "SessionEngine",
    "SessionReport",
    "SimConfig",
    "run_session",
    "ThroughputTrace",
    "load_trace",
]
