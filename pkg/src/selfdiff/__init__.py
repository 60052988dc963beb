"""Simulation and verification toolkit for self-interacting diffusions."""
