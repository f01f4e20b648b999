"""Characteristic forms and regularized Chern currents of Hermitian complexes."""

__version__ = "0.1.0"
