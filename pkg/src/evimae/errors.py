"""Exception hierarchy shared by every module."""


class EviMAEError(Exception):
    """Base class for all package errors."""


class MissingFile(EviMAEError, FileNotFoundError):
    pass


class ManifestMismatch(EviMAEError):
    pass


class ParseError(EviMAEError, ValueError):
    pass


class InvalidParam(EviMAEError, ValueError):
    pass


class ShapeError(EviMAEError, ValueError):
    pass


class AllNaN(EviMAEError, ValueError):
    pass


class TooFewFrames(EviMAEError, ValueError):
    pass


class EmptyGroup(EviMAEError, ValueError):
    pass


class ZeroNorm(EviMAEError, ValueError):
    pass


class EmptyMask(EviMAEError, ValueError):
    pass


class EmptySplit(EviMAEError, ValueError):
    pass


class UnknownDevice(EviMAEError, KeyError):
    pass


class ConfigError(EviMAEError, ValueError):
    pass


class IoError(EviMAEError, OSError):
    pass
