"""Laplace-domain and time-domain analysis of constant-spacing vehicle platoons."""

__version__ = "0.1.0"
