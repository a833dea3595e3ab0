"""Exception hierarchy.  ``exit_code`` is what the CLI returns."""


class AieMapError(Exception):
    exit_code = 1


class ValidationError(AieMapError):
    exit_code = 2


class ModelParseError(ValidationError):
    pass


class LoweringError(ValidationError):
    pass


class InfeasibleError(AieMapError):
    exit_code = 3


class InvariantViolation(AieMapError):
    """A checked-mode runtime assertion failed; this points at a compiler bug."""

    exit_code = 4
