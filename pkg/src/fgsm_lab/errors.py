"""Exception hierarchy shared by every module of the lab."""


class LabError(Exception):
    """Base class for all errors raised by fgsm_lab."""


class ShapeError(LabError, ValueError):
    """Tensor or layer shapes do not chain."""


class ArgumentError(LabError, ValueError):
    """A scalar argument is outside its allowed range."""


class StateError(LabError, RuntimeError):
    """An object was used in a state it does not support (e.g. a stale trace)."""


class FormatError(LabError, ValueError):
    """A file or byte stream could not be decoded."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class EmptyDatasetError(LabError, ValueError):
    pass


class InvariantError(LabError, AssertionError):
    """An internal post-condition failed. Always a bug."""
