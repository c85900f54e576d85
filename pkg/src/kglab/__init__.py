"""Riccati gauges and modified energies for Klein-Gordon equations with
time-dependent potentials."""

__version__ = "0.1.0"
