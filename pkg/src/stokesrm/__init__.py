"""Adaptive stabilized finite elements for Stokes flow via residual
minimization against a discontinuous Galerkin test space."""

__version__ = "0.1.0"
