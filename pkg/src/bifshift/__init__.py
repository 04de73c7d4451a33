"""Numerical bifurcation toolkit built on overdetermined extended systems."""

__version__ = "0.1.0"
