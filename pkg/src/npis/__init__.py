"""Nonparametric importance sampling on linear blend frequency polygons."""

__version__ = "0.1.0"
