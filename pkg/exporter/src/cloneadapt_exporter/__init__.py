"""Pretrained-encoder embedding export for the cloneadapt engine."""

__version__ = "0.1.0"
