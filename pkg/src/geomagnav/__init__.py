"""Geomagnetic navigation simulator with a gradient-guided TD3 agent."""

__version__ = "0.1.0"
