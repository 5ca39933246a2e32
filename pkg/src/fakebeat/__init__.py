"""Rhythm-based fake face video detection: magnified pulse maps + attention classifier."""

__version__ = "0.1.0"
