"""Transient simulation and periodic compressor control for pipeline networks
carrying a natural-gas/hydrogen mixture."""

__version__ = "0.1.0"
