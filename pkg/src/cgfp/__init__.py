"""Finite-precision behavior of conjugate gradient variants."""

__version__ = "0.1.0"
