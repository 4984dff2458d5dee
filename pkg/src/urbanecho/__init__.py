"""Deterministic 2D urban sound-propagation simulator and benchmark toolkit."""

__version__ = "0.1.0"
