"""Differentiable nonparametric belief propagation."""

__version__ = "0.1.0"
