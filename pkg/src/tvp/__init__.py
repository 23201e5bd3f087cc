"""Desk-scale solver for the truncated thermo-visco-plastic Norton-Hoff system."""

__version__ = "0.1.0"
