"""Numerical laboratory for boundary control of the linear and nonlinear KdV equation at critical lengths."""

__version__ = "0.1.0"
