"""Lifelong inductive logic programming with compositional neural logic models."""

__version__ = "0.1.0"
