"""Numerical laboratory for estimation-error-driven nonlinear wave
dynamics and the uncertainty relations they generalize."""

__version__ = "0.1.0"
