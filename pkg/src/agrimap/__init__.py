"""Quantitative core of a monocular SLAM + MVS agricultural mapping pipeline."""

__version__ = "0.1.0"
