"""Severity-graded pothole augmentation: WGAN-GP ROIs, Gram texture, Poisson embedding."""

__version__ = "0.1.0"
