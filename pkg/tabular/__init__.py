"""Tabular interactive systems: world generation, user behavior, IRL and the optimizer."""
