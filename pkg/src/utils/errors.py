"""
Error Types
Exception hierarchy shared by the numerics, decoder and pipeline layers
"""


class MacmdError(Exception):
    """Base class for every error raised by this package"""


class ShapeError(MacmdError, ValueError):
    """Tensor shapes or channel counts do not fit the operation"""


class ConfigError(MacmdError, ValueError):
    """Invalid hyperparameter or construction argument"""


class AutogradError(MacmdError, RuntimeError):
    """Misuse of the differentiation record (e.g. backward twice)"""


class DataError(MacmdError):
    """Dataset files missing, unreadable or inconsistent with the model"""


class CheckpointError(MacmdError):
    """Checkpoint file malformed or not matching the architecture"""
