"""Adversarially robust visual cheat detection toolkit."""

__version__ = "0.1.0"
