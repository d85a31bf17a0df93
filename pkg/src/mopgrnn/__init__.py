"""Physics-guided recurrent networks for identifying controlled dynamical systems."""

__version__ = "0.1.0"
