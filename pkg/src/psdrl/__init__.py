"""Posterior sampling for model-based deep RL at desk scale."""

__version__ = "0.1.0"
