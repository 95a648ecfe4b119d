"""Exception hierarchy shared across the package.

Validation problems (bad schedules, mismatched topologies, malformed files) are
kept distinct from runtime/protocol failures so the CLI can map them to
different exit codes.
"""

from __future__ import annotations


class EcadError(Exception):
    """Base class for all package errors."""


class ValidationError(EcadError):
    """Invalid input data or configuration."""


class ScheduleFormatError(ValidationError):
    """Malformed schedule or population text (bad JSON, schema, base64, padding)."""


class LengthMismatchError(ValidationError):
    """Bit payload length disagrees with the topology cell count."""


class TopologyMismatchError(ValidationError):
    """Schedule structure (name/steps/groups) disagrees with the given topology."""


class FirstStepViolationError(ValidationError):
    """Step 0 of a schedule is not full recompute."""


class CheckpointError(EcadError):
    """Problems restoring a run from disk."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint file exists but cannot be parsed."""


class ManifestMismatchError(CheckpointError):
    """Resume requested with a configuration that differs from the stored manifest."""


class ProtocolError(EcadError):
    """External evaluator misbehaved (malformed line, bad id, dead worker)."""

    def __init__(self, message: str, line: str | None = None):
        super().__init__(message)
        self.line = line


class HandshakeError(ProtocolError):
    """Worker handshake missing or incompatible."""


class EvalTimeoutError(ProtocolError):
    """Worker failed to answer within the configured timeout."""


class EvaluationFailedError(ProtocolError):
    """A candidate exhausted its retries; the generation was aborted."""

    def __init__(self, message: str, failed_ids: list[str] | None = None):
        super().__init__(message)
        self.failed_ids = failed_ids or []
