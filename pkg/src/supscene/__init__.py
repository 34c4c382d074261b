"""Overlap-supervised global descriptors for structure-from-motion image retrieval."""

__version__ = "0.1.0"
