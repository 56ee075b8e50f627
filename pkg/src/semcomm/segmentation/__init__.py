"""Segmentation network, losses and training."""
