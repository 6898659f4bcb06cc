"""Exception hierarchy shared by every protocol module."""


class SFSLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SFSLError, ValueError):
    pass


# model store
class IndexOutOfRange(SFSLError, IndexError):
    pass


class NonFiniteUpdate(SFSLError, ValueError):
    pass


# secure aggregation
class InvalidGroupElement(SFSLError, ValueError):
    pass


class LengthMismatch(SFSLError, ValueError):
    pass


class InsufficientShares(SFSLError, ValueError):
    pass


class ShareSetMismatch(SFSLError, ValueError):
    pass


class ThresholdNotMet(SFSLError):
    pass


class ProtocolViolation(SFSLError):
    pass


class StaleMessage(ProtocolViolation):
    """A message arrived for a stage that has already been closed."""


# private set union
class InvalidRate(SFSLError, ValueError):
    pass


# perturbation
class CorruptMemo(SFSLError, ValueError):
    pass


class MemoGap(SFSLError, ValueError):
    pass


class UndefinedThreshold(SFSLError, ValueError):
    pass


# quantization
class LevelOutOfRange(SFSLError, ValueError):
    pass


class ZeroWeight(SFSLError, ZeroDivisionError):
    pass


# federation
class RoundAborted(SFSLError):
    pass


class MappingGap(SFSLError, KeyError):
    pass


# wire
class FramingError(SFSLError, ValueError):
    pass


class ProtocolError(SFSLError, ValueError):
    pass
