"""Reflected density-dependent jump processes: simulation, fluid limits,
characteristic boundaries, rate functions and Monte Carlo LDP checks."""

__version__ = "0.1.0"
