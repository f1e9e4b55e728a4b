"""Simulation and verification toolkit for the kinetic Fokker-Planck-Alignment equation with Rayleigh friction."""

__version__ = "0.1.0"
