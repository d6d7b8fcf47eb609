"""Exception hierarchy shared by services and CLI commands.

Everything derives from ValueError so callers that only know about bad input
keep working. The CLI turns any AirBoneError into the JSON error body printed
on stderr via to_dict().
"""
from typing import Optional


class AirBoneError(ValueError):
    """Base class for all pipeline errors."""

    stage: Optional[str] = None

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        if stage is not None:
            self.stage = stage

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "stage": self.stage,
            "message": self.message,
        }


class SignalError(AirBoneError):
    """Invalid waveform, filter, or framing parameters."""


class StageError(AirBoneError):
    """A named pipeline stage failed.

    Wraps the underlying error so the stage label survives up to the CLI.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}", stage=stage)


class NoVoicedContentError(AirBoneError):
    """Silence trimming left no frames to correlate."""

    stage = "stage1"


class SilentSyncError(AirBoneError):
    """Every synchronization frame was silent in one of the domains."""

    stage = "initialization"


class EnrollmentError(AirBoneError):
    """Unknown user or not enough enrollment audio."""

    stage = "stage2"


class ProtocolError(AirBoneError):
    """Experiment protocol does not match the corpus."""

    stage = "evaluation"


class CorpusIOError(AirBoneError):
    """File read/write failure, carrying the offending path."""

    stage = "io"

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")

    def to_dict(self) -> dict:
        body = super().to_dict()
        body["path"] = self.path
        return body
