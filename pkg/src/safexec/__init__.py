"""Shielded reinforcement-learning execution on a simulated two-venue market."""

__version__ = "0.1.0"
