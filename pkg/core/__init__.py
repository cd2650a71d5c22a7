"""Finite-MDP representation, exact solvers and the simulator's error types."""
