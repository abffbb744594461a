"""Functional graphical model estimation by neighborhood selection."""

__version__ = "0.1.0"
