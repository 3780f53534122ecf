"""Multi-method symbolic melody generation and listener-study statistics."""

__version__ = "0.1.0"
