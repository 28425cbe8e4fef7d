"""Adversarial imitation from demonstrations with partially missing actions."""

__version__ = "0.1.0"
