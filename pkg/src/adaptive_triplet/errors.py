"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed argument: wrong dimension, out-of-range value, unknown id."""


class InvalidConfigError(ValueError):
    """A configuration that cannot be satisfied (e.g. too many draws)."""


class DegeneratePairError(ArithmeticError):
    """An active hinge over two coincident embeddings; the gradient is undefined."""


class NumericFailureError(ArithmeticError):
    """Training produced a non-finite loss.

    ``report`` holds the partial training report up to the failing epoch.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ParseError(ValueError):
    """A file did not conform to its schema. Carries the offending location."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line
