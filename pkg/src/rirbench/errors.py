"""Shared exception types."""


class RirbenchError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RirbenchError, ValueError):
    """Invalid input: bad arguments, malformed files, violated preconditions."""


class TransportError(RirbenchError):
    """A remote endpoint could not be reached or kept failing after retries."""
