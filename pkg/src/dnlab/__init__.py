"""Numerical laboratory for a doubly nonlinear stochastic evolution equation."""

__version__ = "0.1.0"
