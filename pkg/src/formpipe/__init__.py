"""Scanned-form digitisation toolkit: layout, segmentation, decoding, evaluation."""

__version__ = "0.1.0"
