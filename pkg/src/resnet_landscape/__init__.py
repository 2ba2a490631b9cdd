"""Numerical laboratory for local minima of deep residual networks."""

__version__ = "0.1.0"
