"""Trajectory gap filling with DTW-based multiple imputation."""

__version__ = "0.1.0"
