"""Chebyshev tensor-train surrogates for dynamic sensitivities and dynamic SIMM."""

__version__ = "0.1.0"
