"""Probabilistic invariance, reachability and reach-avoid computation for finite-horizon stochastic systems."""

__version__ = "0.1.0"
