"""Exception types shared across the package."""


class AgailError(Exception):
    pass


class InputError(AgailError, ValueError):
    """Bad shapes, dimensions, or arguments passed to an operation."""


class ConfigError(AgailError, ValueError):
    """An experiment configuration that cannot be run."""


class ParseError(AgailError):
    """Malformed demonstration, checkpoint, or metrics file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NumericalError(AgailError, ArithmeticError):
    """Non-finite value produced inside an optimizer or solver."""


class TrainingError(NumericalError):
    """Training diverged (non-finite loss or gradient)."""
