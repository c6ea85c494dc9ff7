"""Desk-scale framework for source-free updating of face anti-spoofing models:
synthetic paired live/spoof data, spoof region estimation, dual-teacher
adversarial transfer, benchmark protocol construction, and PAD metrics."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    FaswrapError,
    InfeasibleSplitError,
    MetricError,
    NumericalError,
    PipelineError,
    ProtocolViolationError,
    SchemaError,
)
