"""
ISO Simulator Errors
====================
Exception hierarchy shared by every package in the simulator.
"""

from typing import Any, Dict, Optional


class ISOError(Exception):
    """Base class for all simulator errors."""


class InvariantViolation(ISOError):
    """A stochastic table, support constraint or trajectory is invalid."""


class ConvergenceError(ISOError):
    """An iterative solver ran out of sweeps before reaching its tolerance."""

    def __init__(self, solver: str, residual: float, iterations: int):
        self.solver = solver
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{solver} did not converge after {iterations} sweeps (residual {residual:.3e})"
        )


class EnumerationTooLarge(ISOError):
    """Exhaustive trajectory enumeration was refused."""

    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"enumeration of {count} trajectories exceeds limit {limit}")


class LearningFailure(ISOError):
    """Reward learning diverged."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class TrainingFailure(ISOError):
    """Policy optimization produced a non-finite loss."""

    def __init__(self, message: str, checkpoint: Optional[Any] = None):
        self.checkpoint = checkpoint
        super().__init__(message)


class ModeCollapseError(ISOError):
    """The adversarial discriminator stayed pinned for a sustained window."""

    def __init__(self, accuracies):
        self.accuracies = list(accuracies)
        super().__init__(
            f"discriminator accuracy pinned over the last {len(self.accuracies)} rounds"
        )


class ExperimentFailed(ISOError):
    """Too many replicas of an experiment failed."""

    def __init__(self, failed: int, total: int):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed}/{total} replicas failed")


class ArtifactError(ISOError):
    """A stored artifact is missing or does not match its checksum."""
