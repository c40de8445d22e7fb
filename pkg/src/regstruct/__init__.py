"""Regularity-structure toolkit for the dynamical Phi^4 model with non-Gaussian noise."""

__version__ = "0.1.0"
