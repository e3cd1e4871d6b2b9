"""Synthetic parametric body toolkit: model, transfer, sampling, scenes and fitting."""

__version__ = "0.1.0"
