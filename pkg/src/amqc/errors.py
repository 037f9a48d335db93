"""Exception hierarchy shared by every subpackage."""


class AmqcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(AmqcError, ValueError):
    pass


class ShapeError(AmqcError, ValueError):
    pass


class NumericError(AmqcError, ArithmeticError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class FormatError(AmqcError, ValueError):
    """A file or byte payload does not follow its documented layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(FormatError):
    """Names the offending element or field."""

    def __init__(self, message, element=None, offset=None):
        if element is not None:
            message = f"<{element}>: {message}"
        super().__init__(message, offset)
        self.element = element


class MalformedFrame(FormatError):
    pass


class StateError(AmqcError, RuntimeError):
    pass


class ConfigError(AmqcError, ValueError):
    pass


class DependencyError(AmqcError, FileNotFoundError):
    pass


class ConnectionLost(AmqcError, ConnectionError):
    def __init__(self, message, unacked=()):
        super().__init__(f"{message}; unacknowledged packet ids: {sorted(unacked)}")
        self.unacked = tuple(sorted(unacked))


class SubscriptionError(AmqcError, RuntimeError):
    pass
