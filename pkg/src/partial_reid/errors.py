"""Exception types raised across the toolkit."""


class PartialReIDError(Exception):
    """Base class for all toolkit errors."""


class InvalidTransformError(PartialReIDError, ValueError):
    pass


class OutOfBoundsError(PartialReIDError, ValueError):
    pass


class InsufficientDataError(PartialReIDError, ValueError):
    pass


class DegenerateConfigurationError(PartialReIDError, ValueError):
    pass


class MismatchedCropsError(PartialReIDError, ValueError):
    pass


class ShapeError(PartialReIDError, ValueError):
    pass


class EmptyBatchError(PartialReIDError, ValueError):
    pass


class DivergenceError(PartialReIDError, ArithmeticError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class DegenerateLabelsError(PartialReIDError, ValueError):
    pass


class TooSmallError(PartialReIDError, ValueError):
    pass


class ProtocolError(PartialReIDError, ValueError):
    pass


class FormatError(PartialReIDError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
