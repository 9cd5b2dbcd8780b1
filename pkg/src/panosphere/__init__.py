"""Panoramic geometry, spherical embeddings and depth evaluation tools."""

__version__ = "0.1.0"
