"""Outer approximations of regions of attraction via occupation measures and moment relaxations."""

__version__ = "0.1.0"
