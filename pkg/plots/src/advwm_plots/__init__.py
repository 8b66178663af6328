"""Read-only rendering of advwm training and evaluation artifacts."""

__version__ = "0.1.0"
