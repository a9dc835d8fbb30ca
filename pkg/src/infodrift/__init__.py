"""Numerical laboratory for insider information drifts, log utility and Shannon information."""

__version__ = "0.1.0"
