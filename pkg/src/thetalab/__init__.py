"""Numerical laboratory for generalized anti-self-dual instantons."""

__version__ = "0.1.0"
