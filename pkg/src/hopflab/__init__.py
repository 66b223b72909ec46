"""Numerical laboratory for harmonic maps from S^3 to S^2."""

__version__ = "0.1.0"
