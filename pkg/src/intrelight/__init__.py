"""Intrinsic-conditioned single-image relighting at desk scale."""

__version__ = "0.1.0"
