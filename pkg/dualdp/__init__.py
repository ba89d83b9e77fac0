"""Explorative dual dynamic programming for discounted infinite-horizon stochastic programs."""

__version__ = "0.3.0"
