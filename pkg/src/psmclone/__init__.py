"""Semantic clone detection from runtime traces via per-executable flow models."""

__version__ = "0.1.0"
