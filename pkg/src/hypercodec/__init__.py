"""Hyperbolic multi-prototype detector for codec-resynthesized speech features."""

__version__ = "0.1.0"
