"""Gesture-aware robot tool handover: perception, control, workflow and an
offline simulator."""

__version__ = "0.1.0"
