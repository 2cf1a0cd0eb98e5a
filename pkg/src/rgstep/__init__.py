"""Exact renormalisation-group step on torus block pavings."""

__version__ = "0.1.0"
