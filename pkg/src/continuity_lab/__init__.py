"""Numerical laboratory for stability estimates of continuity equations."""

__version__ = "0.1.0"
