"""Exception types shared across the pipeline.

Exit-code mapping used by the CLI:
  1 -- configuration / validation problems (bad inputs, bad config)
  2 -- data gaps surfaced in strict mode
  3 -- anything else
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 3


class Form4ParseError(PipelineError):
    """Malformed XML. Carries the byte offset of the failure when known."""

    exit_code = 1

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class SchemaError(PipelineError):
    """A mandatory element is missing. Carries the element name."""

    exit_code = 1

    def __init__(self, message: str, element: str | None = None):
        super().__init__(message)
        self.element = element


class ValidationError(PipelineError):
    """A field value violates its contract (negative shares, zero price, ...)."""

    exit_code = 1


class UnmappedIdentifierError(PipelineError):
    """No CUSIP map entry covers the transaction date."""

    exit_code = 1

    def __init__(self, message: str, cusip: str | None = None):
        super().__init__(message)
        self.cusip = cusip


class DuplicateKeyError(ValidationError):
    """Duplicate (ticker, date) row in a bar file."""


class DataGapError(PipelineError):
    """Market data missing for a required ticker/date."""

    exit_code = 2

    def __init__(self, message: str, ticker: str | None = None, dates=None):
        super().__init__(message)
        self.ticker = ticker
        self.dates = list(dates) if dates else []


class InsufficientHistoryError(DataGapError):
    """Too few usable observations in a trailing window."""


class CalendarRangeError(PipelineError):
    """Trading-calendar shift landed outside the known date range."""

    exit_code = 2


class SingularDesignError(PipelineError):
    """Rank-deficient regression design."""


class DegenerateLabelError(PipelineError):
    """Training labels contain a single class."""

    exit_code = 1


class ShapeError(PipelineError):
    """Feature matrix does not match the model's column contract."""

    exit_code = 1


class ConfigurationError(PipelineError):
    """Invalid or inconsistent run configuration."""

    exit_code = 1


class TuningError(PipelineError):
    """Cross-validation could not score any fold."""

    exit_code = 1


class ThresholdError(PipelineError):
    """Threshold optimization is undefined (single-class validation labels)."""

    exit_code = 1


class MetricError(PipelineError):
    """A metric is undefined on the given inputs (e.g. AUC on one class)."""

    exit_code = 1


class StatTestError(PipelineError):
    """A statistical test's preconditions are not met."""

    exit_code = 1
