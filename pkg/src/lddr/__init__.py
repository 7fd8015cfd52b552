"""Lagrangian dual decision rules for multistage stochastic lot sizing."""

__version__ = "0.1.0"
