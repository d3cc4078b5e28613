"""Iterative label correction for object detection with noisy, incomplete labels.

Test-time augmentation with weighted box fusion regenerates pseudo labels,
a curve fit on the training signal decides when to start, and seamless
cloning builds synthetic training images from the corrected boxes.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .annotations import AnnotationSet, ImageInfo
from .errors import DataError, NumericalError
from .geometry import BBox, Detection, Flip, ViewTransform, default_views

__all__ = [
    "AnnotationSet",
    "BBox",
    "DataError",
    "Detection",
    "Flip",
    "ImageInfo",
    "NumericalError",
    "ViewTransform",
    "default_views",
    "__version__",
]
