"""Exception types shared across the package."""


class VPLabError(Exception):
    """Base class for all vplab errors."""


class InvalidImage(VPLabError):
    """Image pixels violate the expected range/shape contract."""


class EncoderNotFound(VPLabError):
    """Requested encoder id is not registered."""


class InvalidPrompt(VPLabError):
    """Point prompt falls outside the target image."""


class ShapeError(VPLabError):
    """Array shapes are inconsistent with the declared configuration."""


class NumericalError(VPLabError):
    """A non-finite value appeared inside the decoder forward pass."""


class SlotError(VPLabError):
    """Mask slot index out of range."""


class TargetResolutionError(VPLabError):
    """A PEFT target pattern matched no decoder layer."""


class MergeStateError(VPLabError):
    """LoRA merge/unmerge called in the wrong order."""


class ConfigMismatch(VPLabError):
    """Checkpoint fingerprint does not match the attached decoder/config."""


class CorruptCheckpoint(VPLabError):
    """Checkpoint bytes are truncated or malformed."""


class EmptyReference(VPLabError):
    """Reference mask overlaps no feature cell."""


class NoMatch(VPLabError):
    """No similarity cell cleared the sampling threshold."""


class DatasetSpecError(VPLabError):
    """Unknown synthetic dataset family."""


class MigrationRequired(VPLabError):
    """Stored project uses an unsupported schema version."""


class TrainingDiverged(VPLabError):
    """Loss became non-finite; carries the last finite state and history."""

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history if history is not None else []
