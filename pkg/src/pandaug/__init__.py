"""Imbalanced class-incremental streams, patch-grafting augmentation, and
prototype-based continual evaluation."""

__version__ = "0.1.0"
