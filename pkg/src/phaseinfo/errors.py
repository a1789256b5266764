"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` for bad inputs or
parameters (CLI exit code 2) and :class:`NumericalError` for failures of a
numerical procedure on otherwise valid input (CLI exit code 3).
"""

from __future__ import annotations


class PhaseInfoError(Exception):
    """Base class for all package errors."""


class ValidationError(PhaseInfoError, ValueError):
    pass


class NumericalError(PhaseInfoError, ArithmeticError):
    pass


# --- validation --------------------------------------------------------------

class IndivisibleGrid(ValidationError):
    pass


class EmptySelection(ValidationError):
    pass


class InvalidPartition(ValidationError):
    pass


class KTooLarge(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class VolumeTooLarge(ValidationError):
    pass


class BlockTooLarge(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


# --- numerical ---------------------------------------------------------------

class DuplicatePoints(NumericalError):
    def __init__(self, shots):
        self.shots = sorted(int(s) for s in shots)
        head = self.shots[:10]
        more = "" if len(self.shots) <= 10 else f" (+{len(self.shots) - 10} more)"
        super().__init__(
            f"data cloud contains duplicate points at shots {head}{more}; "
            "k-th neighbour distance is zero (enable jitter to break ties)"
        )


class SingularCovariance(NumericalError):
    pass


class OperatorUnderflow(NumericalError):
    pass


class FitDiverged(NumericalError):
    pass


class DegenerateData(NumericalError):
    pass


class LowContrast(NumericalError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class TooManyBadSlices(NumericalError):
    pass


class NonMonotoneCurve(NumericalError):
    pass
