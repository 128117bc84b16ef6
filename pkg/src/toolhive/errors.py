"""Exception types shared across the package."""


class ToolhiveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ToolhiveError):
    """Invalid configuration detected before any work starts."""


class ManifestError(ToolhiveError):
    """A tool manifest or agentization plan fails validation."""


class GroupOverlapError(ManifestError):
    """Two tool groups claim the same member."""

    def __init__(self, colliding: list[str]):
        self.colliding = sorted(colliding)
        super().__init__(f"groups overlap on tools: {', '.join(self.colliding)}")


class MissingScoreError(ToolhiveError):
    """A manual score table lacks an entry for a manifest tool."""


class RetriableBackendError(ToolhiveError):
    """Transient backend failure; the caller may retry the whole operation."""


class BackendProtocolError(ToolhiveError):
    """A backend returned a response the caller cannot parse."""


class ReplayMissError(ToolhiveError):
    """A replay transcript has no entry for the requested exchange."""


class DigestMismatchError(ToolhiveError):
    """A trajectory is paired with a task or toolset it was not produced against."""


class PipelineError(ToolhiveError):
    """Trajectory-pipeline stage failure (bad inputs, invariant violations)."""


class ToolExecutionError(ToolhiveError):
    """Raised by tool implementations to signal a domain-level failure."""


class SimulatedTimeout(ToolExecutionError):
    """Raised by tool implementations to simulate a timeout."""
