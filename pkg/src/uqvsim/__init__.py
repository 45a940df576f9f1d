"""Simulate user query variants from test-collection resources and validate
them against real query variants."""

__version__ = "0.1.0"
