"""Density representations, Stein solutions and diffusion experiments for Pearson targets."""

__version__ = "0.1.0"
