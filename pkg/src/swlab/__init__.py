"""Workbench for weighted fractional-integral inequalities under differential constraints."""

__version__ = "0.1.0"
