"""Procedural generation of plausible and implausible indoor scene images."""

__version__ = "0.1.0"
