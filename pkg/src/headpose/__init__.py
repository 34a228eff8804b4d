"""Markerless head-pose estimation test bench: synthetic phantom data,
a HOG face detector, a from-scratch multi-scale CNN regressor, and a
trimmed-ICP model-based tracker, with a shared evaluation harness."""

__version__ = "0.1.0"
