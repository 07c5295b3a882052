"""Keyword-conditioned clarification question generation."""

__version__ = "0.1.0"
