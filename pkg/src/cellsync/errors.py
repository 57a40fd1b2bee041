"""Exception and warning types raised across the toolkit."""


class CellsyncError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CellsyncError, ValueError):
    """Input violates a documented contract (bad value, bad shape, bad config)."""


class ParseError(ValidationError):
    """A flat file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    path : str, optional
        File being read.
    line : int, optional
        1-based physical line number of the offending row.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IngestError(ValidationError):
    """Structurally valid rows that cannot be combined (duplicates, dangling keys)."""


class MissingArtifactError(ValidationError):
    """An upstream pipeline stage has not been run."""


class NumericalError(CellsyncError, ArithmeticError):
    """A numerical procedure cannot produce a defined result."""


class SingularDesignError(NumericalError):
    """Design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        super().__init__(message)


class ZeroVarianceError(NumericalError):
    """A variable that must vary is constant."""


class InsufficientSamplesError(NumericalError):
    """Too few valid observations for an estimate."""


class DataWarning(UserWarning):
    """Suspicious but admissible input."""
