"""Configuration sweeps, frontier analysis and reports."""

__all__: list[str] = []
