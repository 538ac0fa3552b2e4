"""Exception types shared across the toolkit."""


class NNSplitterError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NNSplitterError):
    """Malformed run configuration (unknown key, bad value)."""


class TrainingFloorError(NNSplitterError):
    """Victim training failed to reach the configured floor accuracy."""

    def __init__(self, achieved: float, floor: float):
        super().__init__(
            f"victim training reached {achieved:.4f}, below the floor {floor:.4f}"
        )
        self.achieved = achieved
        self.floor = floor


class CalibrationError(NNSplitterError):
    """Band-width calibration could not satisfy the accuracy bound."""


class EmptySupportError(NNSplitterError):
    """The obfuscation mask selects no weights anywhere."""


class DivergenceError(NNSplitterError):
    """Delta optimization produced a non-finite loss."""


class PairingError(NNSplitterError):
    """Secrets do not match the checkpoint fingerprint."""
