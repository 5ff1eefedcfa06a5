"""Uncertainty disentanglement and two-threshold active acquisition."""

__version__ = "0.1.0"
