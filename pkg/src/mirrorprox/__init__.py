"""Composite Mirror Prox for multi-term and semi-separable convex problems."""
__version__ = "0.1.0"
