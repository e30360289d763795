"""Modular rigid-multibody dynamics and tracking control by inertia partitioning."""

__version__ = "0.1.0"
