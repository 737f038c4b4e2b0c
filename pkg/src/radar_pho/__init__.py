"""Radar-aided blockage prediction and proactive handover simulation."""

__version__ = "0.1.0"
