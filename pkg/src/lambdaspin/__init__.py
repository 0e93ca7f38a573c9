"""Raman-driven spin dynamics in a three-level Lambda system."""

__version__ = "0.1.0"
