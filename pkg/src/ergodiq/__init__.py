"""Spectral-Galerkin coupling experiments for SPDEs with state-dependent noise."""

__version__ = "0.1.0"
