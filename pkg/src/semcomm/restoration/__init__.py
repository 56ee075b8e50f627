"""Cycle-consistent restoration networks, losses and training."""
