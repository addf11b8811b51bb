"""Numerical laboratory for the spectral shift function of half-line Schroedinger operators."""

__version__ = "0.1.0"
