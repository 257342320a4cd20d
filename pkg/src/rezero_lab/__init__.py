"""Desk-scale lab for residual gating, signal propagation, and dynamical
isometry analysis of deep networks."""

from .tensor import Graph, Parameter, SeededRng, Tensor

__all__ = ["Graph", "Parameter", "SeededRng", "Tensor"]
__version__ = "0.1.0"
