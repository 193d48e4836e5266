"""Explicit-state CSP refinement checking for cooperative-scheduler channel models."""

__version__ = "0.1.0"
