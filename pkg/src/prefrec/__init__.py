"""Toolkit for preference-refined conversational recommendation."""

__version__ = "0.1.0"
