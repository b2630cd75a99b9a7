"""Exception hierarchy shared by every scantex module."""


class ScantexError(Exception):
    """Base class for all library errors."""


class IoError(ScantexError):
    pass


class FormatError(ScantexError):
    pass


class VersionError(FormatError):
    pass


class DimensionError(ScantexError, ValueError):
    pass


class DomainError(ScantexError, ValueError):
    pass


class ParseError(ScantexError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConsistencyError(ScantexError):
    pass


class UncorrectableError(ScantexError):
    pass


class NotFoundError(ScantexError):
    pass


class LayoutError(ScantexError):
    pass


class SegmentationError(ScantexError):
    pass


class BankError(ScantexError):
    pass


class KernelError(ScantexError):
    pass


class ConvergenceError(ScantexError):
    pass


class SingleClassError(ScantexError):
    pass


class NonFiniteError(ScantexError, ValueError):
    pass


class EmptyClassError(ScantexError):
    pass


class InsufficientSubjectsError(ScantexError):
    pass


class InsufficientToolsError(ScantexError):
    pass


class MissingSourceError(ScantexError):
    pass
