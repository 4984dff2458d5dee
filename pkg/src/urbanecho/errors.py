class UrbanEchoError(Exception):
    """Base class for all package errors."""


class ValidationError(UrbanEchoError, ValueError):
    """Input violates a documented precondition."""


class DomainError(ValidationError):
    """Numeric argument outside the domain of a formula."""


class DegenerateInputError(ValidationError):
    """Too few or collinear points for an interpolation."""


class UndefinedMetricError(ValidationError):
    """A metric was requested over an empty pixel set."""


class ParseError(UrbanEchoError):
    """A map document or manifest could not be parsed."""


class NetworkError(UrbanEchoError):
    """Retriable failure talking to a remote map endpoint."""

    def __init__(self, message, endpoint=None, bbox=None):
        super().__init__(message)
        self.endpoint = endpoint
        self.bbox = bbox


class ManifestError(ParseError):
    """Malformed dataset manifest."""
