"""Experiment orchestration: configuration, statistics, results, artifacts and the CLI."""
