"""Headless lockstep racing simulator with digital-twin track reconstruction."""

__version__ = "0.1.0"
