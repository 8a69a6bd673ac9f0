"""Unsupervised single-image intrinsic decomposition from unpaired
collections of natural images, reflectances and shadings."""

__version__ = "0.1.0"
