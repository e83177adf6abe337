"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: configuration problems exit 2, IO
problems exit 3 and numeric failures exit 4.
"""


class SchedRLError(Exception):
    """Base class for all package errors."""


class ConfigError(SchedRLError, ValueError):
    """Invalid configuration value; the message names the offending field."""


class ParseError(SchedRLError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(SchedRLError, ValueError):
    """Well-formed data that violates a domain invariant."""


class StateError(SchedRLError, RuntimeError):
    """Operation not permitted in the current object state."""


class ShapeError(SchedRLError, ValueError):
    """Array or layer dimensions do not line up."""


class NumericError(SchedRLError, ArithmeticError):
    """A non-finite value was produced or supplied."""
