"""Exception types shared across the package."""


class FuzzlmError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(FuzzlmError):
    """A model or settings object violates its own constraints."""


class ContractViolation(FuzzlmError):
    """A caller broke a documented precondition (e.g. wrong window length)."""


class StreamTokenizeError(FuzzlmError):
    """An object has a `stream` keyword with no matching `endstream`."""

    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


class CheckpointFormatError(FuzzlmError):
    """Checkpoint file is not a valid container (bad magic, truncated, ...)."""


class UnsupportedVersionError(CheckpointFormatError):
    """Checkpoint container version is newer than this code understands."""


class TrainingDiverged(FuzzlmError):
    """Validation loss became non-finite; training stopped early."""


class GradientError(FuzzlmError):
    """A gradient tensor contains NaN or Inf; the update step was aborted."""


class HostParseError(FuzzlmError):
    """Host PDF could not be parsed as a classic-xref document."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at byte {position})"
        super().__init__(message)
        self.position = position


class UnsupportedHostError(HostParseError):
    """Host PDF uses features outside the classic-xref subset."""


class AssemblyError(FuzzlmError):
    """Incremental update request is inconsistent with the host."""


class EmptyStoreError(FuzzlmError):
    """Binary re-insertion was requested but the part store is empty."""


class CoverageFormatError(FuzzlmError):
    """A coverage file line does not match the `unit,block_id` format."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"{message} (line {line_number})")
        self.line_number = line_number


class CampaignConfigError(FuzzlmError):
    """The campaign cannot start (missing target binary, bad template, ...)."""
