"""Exception hierarchy shared by every care_rag module."""

from __future__ import annotations


class CareRagError(Exception):
    """Base class for all package errors."""


class ConfigError(CareRagError):
    """Invalid configuration or invalid arguments to a constructor."""


class BackendError(CareRagError):
    """A completion backend failed to produce text."""


class TransportError(BackendError):
    """Network failure that persisted through every retry."""


class RemoteError(BackendError):
    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(f"remote returned HTTP {status}: {message}".rstrip(": "))


class UnmatchedStimulusError(BackendError):
    """The scripted backend has no rule for the given prompt."""

    def __init__(self, prompt: str):
        self.prompt = prompt
        preview = prompt if len(prompt) <= 160 else prompt[:157] + "..."
        super().__init__(f"no scripted rule matches prompt: {preview!r}")


class ProtocolError(CareRagError):
    """A remote service answered with a payload we cannot interpret."""


class IngestionError(CareRagError):
    """Corpus could not be indexed."""


class StageError(CareRagError):
    """A pipeline stage failed; ``partial`` carries whatever was produced."""

    def __init__(self, stage: str, message: str, partial=None):
        self.stage = stage
        self.partial = partial
        super().__init__(f"{stage}: {message}")


class ParseError(CareRagError):
    """Model output did not follow the required format."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class RepairError(CareRagError):
    """QA repair could not complete for one instance."""
