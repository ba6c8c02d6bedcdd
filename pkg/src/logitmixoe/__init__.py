"""Logit-space mixture outlier exposure on small MLPs and synthetic data."""

__version__ = "0.1.0"
