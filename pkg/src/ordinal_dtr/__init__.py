"""Optimal two-stage dynamic treatment regimes for ordinal outcomes."""

__version__ = "0.1.0"
