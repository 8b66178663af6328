"""Adversarial-curriculum training loop for a toy action-conditioned world model."""

__version__ = "0.1.0"
