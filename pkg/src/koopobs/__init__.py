"""Koopman-spectral observability analysis with permutation symmetries."""

__version__ = "0.1.0"
