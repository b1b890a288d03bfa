"""Symmetry-aware global-policy networks for grid-world exploration."""

__version__ = "0.1.0"
