"""
Custom exceptions for the ocunet package
"""


class OCUNetError(Exception):
    """Base exception for all ocunet related errors"""

    pass


class ShapeError(OCUNetError, ValueError):
    """Raised when tensor shapes or dimensions do not agree"""

    pass


class TapeError(OCUNetError):
    """Raised when the autodiff tape is misused"""

    pass


class ConfigError(OCUNetError, ValueError):
    """Raised when a configuration value is invalid"""

    pass


class DataError(OCUNetError):
    """Raised when input data cannot be loaded or is inconsistent"""

    pass


class ManifestError(DataError):
    """Raised when a sample manifest is malformed or references missing files"""

    pass


class MaskDecodingError(DataError):
    """Raised when a mask holds intensities outside every class band"""

    pass


class CheckpointError(OCUNetError):
    """Raised when a checkpoint file is invalid or does not fit the model"""

    pass


class TrainingError(OCUNetError):
    """Raised when the optimization loop cannot continue"""

    def __init__(self, message: str, epoch: int = -1, step: int = -1):
        if epoch >= 0:
            message = f"epoch {epoch}, step {step}: {message}"
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class NonFiniteGradientError(TrainingError):
    """Raised when a gradient holds NaN or Inf values"""

    def __init__(self, parameter: str, epoch: int = -1, step: int = -1):
        message = f"non-finite gradient for parameter '{parameter}'"
        super().__init__(message, epoch, step)
        self.parameter = parameter
