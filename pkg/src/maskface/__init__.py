"""Synthetic face-mask augmentation and masked-face verification evaluation."""

__version__ = "0.1.0"
