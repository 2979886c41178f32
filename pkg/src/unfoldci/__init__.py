"""Confidence intervals for constrained linear Gaussian inverse problems."""

from . import constraints, intervals, model, program, sim

__version__ = "0.1.0"

__all__ = ["constraints", "intervals", "model", "program", "sim", "__version__"]
