"""Mixture-of-planar-experts view synthesis engine."""

__version__ = "0.1.0"
