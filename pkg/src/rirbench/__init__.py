"""Workbench for text-conditioned room-impulse-response research."""

__version__ = "0.1.0"
