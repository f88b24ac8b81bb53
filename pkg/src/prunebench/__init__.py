"""Desk-scale CNN inference and LASSO channel pruning for segmentation networks."""

__version__ = "0.1.0"
