"""Qubit-cavity-qubit quantum bus beyond the rotating-wave approximation."""

__version__ = "0.1.0"
