"""Exception types shared across the package.

The CLI maps these onto exit codes: data problems exit with 2, numerical
failures with 3.
"""


class CorpusError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(ArithmeticError):
    """Raised when parameters or statistics leave their valid domain."""
