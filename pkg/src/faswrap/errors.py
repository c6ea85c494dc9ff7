"""Exception types shared across the package."""


class FaswrapError(Exception):
    """Base class for all package errors."""


class ConfigError(FaswrapError):
    """Invalid or inconsistent configuration."""


class SchemaError(FaswrapError):
    """A manifest file violates the manifest schema."""


class DataError(FaswrapError):
    """A dataset cannot satisfy a sampling or sizing request."""


class MetricError(FaswrapError):
    """Score set unusable for the requested metric (e.g. single class)."""


class ProtocolViolationError(FaswrapError):
    """A benchmark protocol constraint was violated."""


class InfeasibleSplitError(FaswrapError):
    """Requested attribute distribution cannot be met by the available pool."""

    def __init__(self, message, attribute=None):
        super().__init__(message)
        self.attribute = attribute


class PipelineError(FaswrapError):
    """Incompatible intermediate shapes or inputs inside a processing pipeline."""


class NumericalError(FaswrapError):
    """Non-finite values or probabilities outside their legal range."""


class ExportError(FaswrapError):
    """Inference export is missing a required component."""
