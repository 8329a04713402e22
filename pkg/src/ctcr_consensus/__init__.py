"""Exact delay-plane stability analysis of a two-delay PD consensus protocol."""

__version__ = "0.1.0"
