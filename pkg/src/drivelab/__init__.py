"""Constrained model-based RL laboratory for signalized-intersection driving."""

__version__ = "0.1.0"
