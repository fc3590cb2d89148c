"""Desk-scale set-valued calculus and stochastic control verification."""

__version__ = "0.1.0"
