"""
Streaming simulation.

- traces: throughput trace loading, statistics and synthetic traces
- predictors: multi-timescale throughput prediction
- error_model: prediction error history, success probabilities, fits
- adaptation: LOLYPOP, FESTIVE and lowest-quality selection rules
- engine: virtual-time session simulation
"""

__all__: list[str] = []
