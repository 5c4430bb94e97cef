"""Kelp point classification and cover estimation for benthic survey imagery."""

__version__ = "0.1.0"
