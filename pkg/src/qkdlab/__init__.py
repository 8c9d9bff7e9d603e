"""Simulation and verification toolkit for the entanglement-based (modified Lo-Chau) QKD protocol."""

__version__ = "0.1.0"
