"""Exception types raised across the package."""


class RdrpError(Exception):
    """Base class for every error raised by rdrp."""


class InvalidConfigError(RdrpError, ValueError):
    pass


class InvalidArgumentError(RdrpError, ValueError):
    pass


class SchemaError(RdrpError, ValueError):
    """A required CSV column is missing."""

    def __init__(self, column):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class ParseError(RdrpError, ValueError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}: column {column!r} has non-numeric value {value!r}")
        self.row = row
        self.column = column


class ValidationError(RdrpError, ValueError):
    pass


class DegenerateDatasetError(RdrpError, ValueError):
    """Raised when an operation needs both treated and control samples."""


class DegenerateNormalizationError(RdrpError, ValueError):
    pass


class AssumptionViolationError(RdrpError, ValueError):
    """Positive-treatment-effect assumption does not hold."""


class RoiScopeError(RdrpError, ValueError):
    """ROI falls outside the open unit interval."""


class ShapeError(RdrpError, ValueError):
    pass


class FormatError(RdrpError, ValueError):
    pass


class CorruptionError(RdrpError, ValueError):
    pass


class SizeLimitError(RdrpError, ValueError):
    pass


class CalibrationDegenerateError(RdrpError, ValueError):
    pass


class OutputError(RdrpError, OSError):
    """A report file could not be written; ``path`` names it."""

    def __init__(self, path, reason):
        super().__init__(f"cannot write {path}: {reason}")
        self.path = str(path)
