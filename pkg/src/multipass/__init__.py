"""Multipolar interaction landscapes and mountain-pass paths for rigid molecules."""

__version__ = "0.1.0"
