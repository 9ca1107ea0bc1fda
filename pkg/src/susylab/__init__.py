"""Truncated-spectral laboratory for Gaussian pullback measures, regularised
determinants and Wick combinatorics on the flat torus."""

__version__ = "0.1.0"
