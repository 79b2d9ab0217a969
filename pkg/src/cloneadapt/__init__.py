"""Cross-lingual code clone detection adaptation engine."""

__version__ = "0.1.0"
