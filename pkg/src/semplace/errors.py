"""Exception hierarchy shared by all semplace modules.

The three intermediate classes map onto CLI exit codes: UsageError -> 2,
DataError -> 3, NumericError -> 4.
"""


class SemplaceError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(SemplaceError):
    """Bad invocation: unknown flag value, missing argument, bad combination."""

    exit_code = 2


class DataError(SemplaceError):
    """Input data is malformed, inconsistent, or cannot be satisfied."""

    exit_code = 3


class NumericError(SemplaceError):
    """Numerical failure during optimization or evaluation."""

    exit_code = 4


class ParseError(DataError):
    """Document does not parse as the expected file format."""


class InvariantError(DataError):
    """A structural invariant of a domain object is violated."""


class UnknownScene(DataError):
    """A referenced scene id is not present in the registry."""


class GenerationError(DataError):
    """Procedural generation could not satisfy its constraints."""


class SamplingExhausted(DataError):
    """Rejection sampling hit its attempt budget before filling quotas."""


class DegenerateGeometry(DataError):
    """Geometric query on coincident or otherwise degenerate input."""


class InsufficientPairs(DataError):
    """Not enough distinct scene pairs to split."""


class NoFreeSpace(DataError):
    """A scene has no feasible placement samples."""


class VariantMismatch(DataError):
    """Model file or weights do not match the declared network variant."""


class FingerprintMismatch(VariantMismatch):
    """Model was trained under a different feature configuration."""


class RangeError(DataError):
    """Argument outside its documented range."""


class EmptyInput(DataError):
    """An operation that needs at least one record received none."""


class ShapeMismatch(SemplaceError):
    """Array argument has the wrong length or shape."""


class NonFiniteLoss(NumericError):
    """Loss or gradient became NaN/Inf; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def exit_code_for(exc: BaseException) -> int:
    """Exit code the CLI should use for an exception."""
    if isinstance(exc, UsageError):
        return 2
    if isinstance(exc, NumericError):
        return 4
    if isinstance(exc, SemplaceError):
        return 3
    return 1
