"""Exception types shared across the package.

The CLI maps these onto process exit codes: I/O problems exit 2,
validation problems exit 3, remote-service problems exit 4.
"""


class CCMineError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CCMineError):
    """Malformed input data, inconsistent arguments, or contract violations."""


class FormatError(ValidationError):
    """A file does not conform to its declared on-disk format."""


class MissingEmbeddingError(ValidationError):
    """A concept has no embedding available; the message names the concept."""

    def __init__(self, concept: str):
        super().__init__(f"no embedding available for concept: {concept!r}")
        self.concept = concept


class TransportError(CCMineError):
    """The remote completion service could not be reached."""


class ServiceError(CCMineError):
    """The remote completion service answered with a non-retryable failure."""


class ResponseParseError(CCMineError):
    """A completion response could not be parsed into the expected shape."""
