"""Discrete-event simulator for live VM and container migration of EPC functions."""

__version__ = "0.1.0"
