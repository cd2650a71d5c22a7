"""Stage timing and Prometheus metrics for optimizer runs."""
