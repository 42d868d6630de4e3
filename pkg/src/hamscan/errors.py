"""Exception types shared across the package.

Every error raised by library code derives from HamscanError so callers
(and the CLI) can distinguish domain failures (exit code 1) from usage
errors (exit code 2).
"""


class HamscanError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDamping(HamscanError):
    """Damping coefficient must be strictly positive for this operation."""


class DegenerateEigenbasis(HamscanError):
    """Eigenvector basis is singular (critical damping or omega_d ~ 0)."""


class ResonancePole(HamscanError):
    """Transfer-function denominator underflowed to zero (nu = 0 at resonance)."""


class NonFiniteInput(HamscanError):
    """An input array contains NaN or infinity."""


class ShapeMismatch(HamscanError):
    """Array arguments disagree on a shared dimension."""


class LogBudgetExceeded(HamscanError):
    """A log-space scan segment accumulated more decay than the plan allows.

    Attributes carry the offending location so callers can re-plan.
    """

    def __init__(self, segment: int, channel: int, magnitude: float, budget: float):
        self.segment = segment
        self.channel = channel
        self.magnitude = magnitude
        self.budget = budget
        super().__init__(
            f"segment {segment}, channel {channel}: cumulative nu*delta "
            f"{magnitude:.3f} exceeds log budget {budget:.3f}"
        )


class NonPositiveDecay(HamscanError):
    """Effective receptive field requires nu*delta > 0."""


class NotConverged(HamscanError):
    """An iterative computation did not reach its tolerance."""


class NegativeEnergyInput(HamscanError):
    """Energy fields must be non-negative."""


class InvalidConfig(HamscanError):
    """A configuration value is missing, malformed, or out of range."""


class InvalidTarget(HamscanError):
    """A label/target tensor is malformed for the requested loss."""


class MissingCheckpoint(HamscanError):
    """Checkpoint path does not exist or lacks required entries."""


class FormatError(HamscanError):
    """A binary file does not conform to its declared format."""
