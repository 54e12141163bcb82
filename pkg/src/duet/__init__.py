"""Duet: agentic design understanding for RTL through tool experiments."""

__version__ = "0.1.0"
