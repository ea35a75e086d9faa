"""Terrain-aware motion optimization toolkit for legged systems."""

__version__ = "0.1.0"
