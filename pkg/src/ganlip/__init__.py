"""Desk-scale lip-sync GAN comparison harness."""

__version__ = "0.1.0"
