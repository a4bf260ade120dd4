"""Quantify deterministic frequency deviations and explain them with linear
and boosted-tree models."""

__version__ = "0.1.0"
