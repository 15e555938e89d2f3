"""Exception hierarchy shared by all modules."""


class TnnError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(TnnError, ValueError):
    pass


class DomainError(TnnError, ValueError):
    """A point lies outside the model's box domain."""


class NumericError(TnnError, ArithmeticError):
    """A non-finite value appeared; ``location`` says where."""

    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class DegenerateChannelError(NumericError):
    """A subnetwork output channel has (numerically) zero L2 norm."""

    def __init__(self, channel, norm):
        super().__init__(f"channel {channel} is degenerate (norm {norm:.3e})", location=channel)
        self.channel = channel
        self.norm = norm


class DegenerateTargetError(NumericError):
    pass


class DegenerateTrialError(NumericError):
    pass


class SingularSystemError(NumericError):
    pass


class ConsistencyError(TnnError, RuntimeError):
    """A cached grid no longer matches the parameters of its model."""


class FormatError(TnnError, ValueError):
    """Malformed or unsupported model/config/report file."""


class ParseError(TnnError, ValueError):
    """Syntax error in a target expression; carries line and column (1-based)."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column
