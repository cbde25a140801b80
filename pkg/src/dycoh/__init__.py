"""Dyadic coherence screening of white-matter peak fields."""

__version__ = "0.1.0"
