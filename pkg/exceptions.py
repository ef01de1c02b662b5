"""Error taxonomy for the scan statistic library and CLI."""

from typing import Optional


class ScanStatisticError(Exception):
    """Base class for every error raised on purpose by this package."""


class ParameterDomainError(ScanStatisticError, ValueError):
    pass


class DomainError(ScanStatisticError, ValueError):
    pass


class DegenerateSampleError(ScanStatisticError, ValueError):
    pass


class DegenerateReplicatesError(ScanStatisticError, ValueError):
    pass


class NonConvergenceError(ScanStatisticError, RuntimeError):
    """EM ran out of iterations; the last iterate is kept on the exception."""

    def __init__(self, message: str, params=None, iterations: int = 0):
        super().__init__(message)
        self.params = params
        self.iterations = iterations


class IngestError(ScanStatisticError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = path or "<input>"
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class LocationMismatchError(IngestError):
    pass
