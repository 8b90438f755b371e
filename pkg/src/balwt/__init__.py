"""Augmented balancing weights: estimators, identities, tuning and simulation."""

__version__ = "0.1.0"
