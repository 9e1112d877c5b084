"""Jointly trained duration-informed transformer for text-to-speech, desk scale."""

__version__ = "0.1.0"
