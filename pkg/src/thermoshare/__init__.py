"""Shared-space AC set-point engine with budget-balanced cost sharing."""

__version__ = "0.1.0"
