"""Synchronization indices from cell activity series and regression importance analysis."""

__version__ = "0.1.0"

