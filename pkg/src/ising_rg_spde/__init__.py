"""Numerical laboratory for a regularized stochastic-quantization SPDE of the 1D Ising chain."""

__version__ = "0.1.0"
