"""Curvature flow of planar networks with triple junctions."""

__version__ = "0.1.0"
