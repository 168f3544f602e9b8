"""Pseudo-rigid-body simulation and identification of vibrating twisted beams."""

__version__ = "0.1.0"
