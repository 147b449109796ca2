"""Numerical BGG prolongation of overdetermined conformal operators."""

__version__ = "0.1.0"
