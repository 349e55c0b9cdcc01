"""Exact boundary-condition enforcement for physics-informed training on 2D domains."""

__version__ = "0.1.0"
