"""Stochastic receding-horizon energy management for a series hydraulic hybrid."""

__version__ = "0.1.0"
