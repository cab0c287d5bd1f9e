"""Spectral simulator and Monte Carlo laboratory for the stochastic wave equation
with spatially correlated noise: small-noise CLT, Hölder regularity and
moderate-deviation rate functions."""

__version__ = "0.1.0"
