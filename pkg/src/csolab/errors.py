"""Exception hierarchy shared by all csolab modules."""


class CsoError(Exception):
    """Base class for every error raised by csolab."""


class BadMagic(CsoError):
    pass


class Truncated(CsoError):
    pass


class EmptyPool(CsoError):
    pass


class ShapeMismatch(CsoError, ValueError):
    pass


class OddSpatialDim(ShapeMismatch):
    pass


class BadSpatialDims(ShapeMismatch):
    pass


class IndexOutOfRange(CsoError, IndexError):
    pass


class ArchMismatch(CsoError):
    pass


class CorruptHeader(CsoError):
    pass


class DivergedLoss(CsoError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class RegimeMismatch(CsoError):
    pass


class OutOfBounds(CsoError):
    pass


class UsageError(CsoError):
    pass


class ConfigError(CsoError):
    pass
