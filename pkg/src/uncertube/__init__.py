"""Uncertainty tubes for ensembles of predicted particle trajectories."""

__version__ = "0.1.0"
