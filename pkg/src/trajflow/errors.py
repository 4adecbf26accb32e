"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data/format problems exit 2, numerical failures exit 3.
"""


class TrajflowError(Exception):
    """Base class for all package errors."""


class BehindCameraError(TrajflowError):
    """A point has non-positive depth in the camera frame."""


class CalibrationError(TrajflowError):
    """Extrinsic calibration did not converge.

    Carries the final mean squared pixel residual so callers can report it.
    """

    def __init__(self, message: str, residual_px2: float):
        super().__init__(message)
        self.residual_px2 = residual_px2


class HandFitError(TrajflowError):
    """Hand pose optimization failed (non-finite loss or unusable frame)."""

    def __init__(self, message: str, iteration: int | None = None, frame_index: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.frame_index = frame_index


class EmbodimentError(TrajflowError):
    """An operation received data from the wrong embodiment."""


class SamplingError(TrajflowError):
    """The ODE sampler produced a non-finite state."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class TrainingError(TrajflowError):
    """Training aborted (non-finite gradient or loss).

    ``snapshot`` holds diagnostic context: the step index and the names of
    offending parameters.
    """

    def __init__(self, message: str, step: int, snapshot: dict | None = None):
        super().__init__(message)
        self.step = step
        self.snapshot = snapshot or {}


class LayoutError(TrajflowError):
    """Scene randomization could not satisfy the separation constraints."""


class DemoError(TrajflowError):
    """A scripted demonstration could not be generated for the layout."""


class MetricMismatchError(TrajflowError):
    """A metric was requested for the wrong task horizon class."""


class DataFormatError(TrajflowError):
    """Base class for persisted-artifact problems."""


class VersionMismatchError(DataFormatError):
    """A file declares an unsupported format version."""


class TruncatedFileError(DataFormatError):
    """A binary payload is shorter than its index claims."""


class ChecksumError(DataFormatError):
    """A record block failed its integrity check.

    ``record`` names the offending record index.
    """

    def __init__(self, message: str, record: int):
        super().__init__(message)
        self.record = record


class FingerprintError(DataFormatError):
    """A stored fingerprint does not match the configuration that made it."""
