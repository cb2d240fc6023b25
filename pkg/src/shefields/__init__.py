"""Monte Carlo laboratory for the 1D stochastic heat equation with flat initial data."""

__version__ = "0.1.0"
