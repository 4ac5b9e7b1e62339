"""Headless shared-presence session framework and psychometrics toolkit."""

__version__ = "0.1.0"
