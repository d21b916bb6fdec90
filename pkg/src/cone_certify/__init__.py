"""Cone-contraction certificates and numerical checks for the normal approximation of Birkhoff sums."""

__version__ = "0.1.0"
