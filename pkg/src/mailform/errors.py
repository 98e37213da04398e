"""Exception hierarchy shared by every pipeline stage.

Each error carries a ``retryable`` flag; the pipeline retries only those
marked retryable and turns everything else into a terminal ``Failed`` state.
"""

from __future__ import annotations


class MailformError(Exception):
    retryable = False

    def __init__(self, message: str, *, retryable: bool | None = None) -> None:
        super().__init__(message)
        if retryable is not None:
            self.retryable = retryable


class IngestionError(MailformError):
    """The inbox source could not be enumerated."""

    retryable = True


class MimeParseError(MailformError):
    """Raw bytes are not a usable MIME message."""


class ExtractionError(MailformError):
    def __init__(self, message: str, *, retryable: bool | None = None,
                 raw_response: str | None = None, filename: str | None = None) -> None:
        super().__init__(message, retryable=retryable)
        self.raw_response = raw_response
        self.filename = filename


class FormatError(MailformError):
    """Payload is not a parseable PDF."""


class SchemaError(MailformError):
    """Form structure is invalid, e.g. two fields normalize to the same name."""


class FormSpecError(MailformError):
    """Bad input to the synthetic form generator."""


class PlanError(MailformError):
    """A plan references fields the form does not have."""

    def __init__(self, message: str, *, unknown: list[str] | None = None) -> None:
        super().__init__(message)
        self.unknown = list(unknown or [])


class PlanParseError(MailformError):
    """The model response contained no usable JSON object."""


class BackendError(MailformError):
    """Chat-completion backend failure. Transport and status errors are retryable."""

    retryable = True


class PromptError(MailformError):
    pass


class DeliveryError(MailformError):
    retryable = True


class LedgerError(MailformError):
    """The ledger could not be written. Fatal for the daemon."""


class ScoringError(MailformError):
    pass


class ParameterError(MailformError):
    pass


class ConfigError(MailformError):
    pass


class FillError(MailformError):
    """Writing the filled PDF failed."""
