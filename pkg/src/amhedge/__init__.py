"""Hedging American puts with actor-critic agents, and the pricing and
benchmarking machinery around them."""

__version__ = "0.1.0"
