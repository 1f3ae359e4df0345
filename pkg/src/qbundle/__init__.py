"""Numerical Z2 invariants of time-reversal symmetric (quaternionic) bundles."""

__version__ = "0.1.0"
