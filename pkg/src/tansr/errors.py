"""Exception hierarchy shared by every tansr module."""


class TanError(Exception):
    """Base class for all errors raised by tansr."""


class ShapeError(TanError, ValueError):
    pass


class ArgumentError(TanError, ValueError):
    pass


class StateError(TanError, RuntimeError):
    pass


class ConfigError(TanError, ValueError):
    pass


class DataError(TanError, ValueError):
    pass


class FormatError(TanError, ValueError):
    """Checkpoint file is not a tansr checkpoint or has an unknown version."""


class CompatError(TanError, ValueError):
    """Checkpoint tensors do not fit the requested model configuration."""
