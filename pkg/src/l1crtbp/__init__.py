"""Fuel-optimal low-thrust extremals in the circular restricted three-body problem."""

__version__ = "0.1.0"
