"""Riesz capacity, equilibrium measures and Hausdorff measure from capacity decay."""

__version__ = "0.1.0"
