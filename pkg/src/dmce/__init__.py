"""Diffusion-model channel estimation for MIMO receivers with full or few-bit resolution."""

__version__ = "0.1.0"
