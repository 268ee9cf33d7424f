"""Monte Carlo lab for band tracking of frictionless strategies under proportional costs."""

__version__ = "0.1.0"
