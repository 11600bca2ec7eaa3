"""Spam/ham classification with a frozen transformer encoder and a small trained head."""

__version__ = "0.1.0"
