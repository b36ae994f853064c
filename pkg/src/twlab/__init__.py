"""Numerical laboratory for quasilinear wave systems on R^2 x T."""

__version__ = "0.1.0"
