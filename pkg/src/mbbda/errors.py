"""Exception hierarchy. CLI exit codes are attached to each class."""


class MbbError(Exception):
    exit_code = 1


class ValidationError(MbbError, ValueError):
    """Input violates a data invariant."""

    exit_code = 3


class MalformedInputError(ValidationError):
    """A delimited input file could not be parsed."""


class DegenerateDesignError(ValidationError):
    """A group has no samples, so the group effect is not estimable."""


class NumericalError(MbbError, ArithmeticError):
    """A computation could not produce a finite result."""

    exit_code = 4
