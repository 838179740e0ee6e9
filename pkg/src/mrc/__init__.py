"""Variational neural-network weight compression with minimal random coding."""

__version__ = "0.1.0"
