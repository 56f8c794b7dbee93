"""Curvature exploitation for min-max saddle point problems."""

__version__ = "0.1.0"
