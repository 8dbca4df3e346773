"""Noisy memristor simulation and a neural pulse-time predictor for conductance programming."""

__version__ = "0.1.0"
