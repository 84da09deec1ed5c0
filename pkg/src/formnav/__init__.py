"""Adaptive formation navigation for robot teams in narrow corridors."""

__version__ = "0.1.0"
