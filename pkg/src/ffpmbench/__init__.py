"""Bayesian validation toolkit for coupled free-flow / porous-medium flow models."""

__version__ = "0.1.0"
