"""Exception hierarchy shared across the package."""


class PermrankError(Exception):
    """Base class for all package errors."""


class ShapeError(PermrankError, ValueError):
    pass


class DomainError(PermrankError, ValueError):
    pass


class ConfigError(PermrankError, ValueError):
    pass


class TrainingError(PermrankError, RuntimeError):
    pass


class MetricError(PermrankError, ValueError):
    pass


class ResourceGuardError(PermrankError, RuntimeError):
    """Raised when an enumeration would exceed its evaluation budget."""


class FormatError(PermrankError, ValueError):
    """Unsupported file format or version."""


class ParseError(FormatError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
