"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, message):
        self.op = op
        super().__init__(f"{op}: {message}")


class NumericError(ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class UsageError(ValueError):
    """An API was called outside its contract."""


class ConfigError(ValueError):
    """Invalid configuration, priors or dataset for the requested run."""


class EstimatorError(ValueError):
    """A risk estimator was asked for a mean over an empty sample."""


class DataError(ValueError):
    """Malformed dataset or evaluation file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(IOError):
    """Checkpoint directory is missing, corrupt or incompatible."""
