"""Exception hierarchy shared by all edgepart modules."""


class EdgePartError(Exception):
    """Base class for every error raised by this package."""


class ParseError(EdgePartError, ValueError):
    pass


class ValidationError(EdgePartError, ValueError):
    pass


class ConfigError(EdgePartError, ValueError):
    pass


class GeometryError(EdgePartError, ValueError):
    pass


class RangeError(EdgePartError, IndexError):
    pass


class DomainError(EdgePartError, ValueError):
    pass


class LengthError(EdgePartError, ValueError):
    pass


class CoverageError(EdgePartError, ValueError):
    pass


class AvailabilityError(EdgePartError, ValueError):
    pass


class NoTargetError(EdgePartError, ValueError):
    pass


class SizeError(EdgePartError, ValueError):
    pass


class ProtocolError(EdgePartError, RuntimeError):
    """An event arrived that is not valid in the FSM's current phase."""


class BusyError(ProtocolError):
    """A follower got a second assignment while still holding one."""


class FrameError(EdgePartError, ValueError):
    pass


class IncompleteError(EdgePartError, ValueError):
    pass


class OverlapError(EdgePartError, ValueError):
    pass


class DuplicateIdError(EdgePartError, ValueError):
    pass
