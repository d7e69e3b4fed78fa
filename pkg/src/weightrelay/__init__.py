"""Collaborative training by relaying weights, never gradients or data."""

__version__ = "0.1.0"
