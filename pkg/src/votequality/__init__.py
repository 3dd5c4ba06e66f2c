"""Estimate intrinsic item quality from position-biased voting time series."""

__version__ = "0.1.0"
