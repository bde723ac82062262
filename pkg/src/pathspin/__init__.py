"""Simulator and analysis toolkit for state transfer through a single particle's path-spin entanglement."""

__version__ = "0.1.0"
