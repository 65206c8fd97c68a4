"""Traveling-wave speeds of cortical spreading depression in a neuron-astrocyte model."""

from .params import DEFAULT, ParameterSet

__version__ = "0.1.0"
__all__ = ["DEFAULT", "ParameterSet", "__version__"]
