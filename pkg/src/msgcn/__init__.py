"""Multi-stage spatial-temporal graph convolutional networks for skeleton-based action segmentation."""

__version__ = "0.1.0"
