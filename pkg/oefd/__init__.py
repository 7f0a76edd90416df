"""Orthogonal embedding: embedding norm carries age, direction carries identity."""
