"""Exception types shared across the package."""


class PGPRecError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PGPRecError, ValueError):
    pass


class ShapeError(PGPRecError, ValueError):
    pass


class NumericError(PGPRecError, ArithmeticError):
    pass


class ParseError(PGPRecError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(PGPRecError, ValueError):
    """Input data is empty or inconsistent."""


class AlignmentError(DataError):
    pass


class SplitError(DataError):
    pass


class GraphError(PGPRecError, ValueError):
    pass


class CheckpointError(PGPRecError, ValueError):
    pass
