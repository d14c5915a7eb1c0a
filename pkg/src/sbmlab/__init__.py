"""Numerical laboratory for the spherical Boltzmann machine."""

__version__ = "0.1.0"
