"""Selection derivatives, nonsmooth algorithmic differentiation and SGD experiments."""

__version__ = "0.1.0"
