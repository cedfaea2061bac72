"""Simulation and verification of superposed quantum error mitigation."""

__version__ = "0.1.0"
