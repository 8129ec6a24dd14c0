"""Inverse game theory toolkit: consistent sets of games from observed equilibria."""

__version__ = "0.1.0"
