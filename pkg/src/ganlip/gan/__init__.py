"""Losses, optimizer, toy models, and the two training protocols."""
