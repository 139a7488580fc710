"""Temporal BEV segmentation with a visibility-masked ConvGRU."""

from .estimator import GeoBEVSegmenter

__all__ = ["GeoBEVSegmenter"]
__version__ = "0.1.0"
