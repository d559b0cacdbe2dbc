"""Numerical laboratory for long-time asymptotics of the derivative NLS."""

__version__ = "0.1.0"
