"""Repeated quantum measurement instruments, their unravelings and entropic statistics."""

__version__ = "0.1.0"
