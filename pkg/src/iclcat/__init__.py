"""Desk-scale laboratory for embedding-space adversarial training of linear
self-attention on in-context linear regression."""

__version__ = "0.1.0"
