"""Deterministic generator for the tiny TFLite fixture corpus."""

__version__ = "0.1.0"
