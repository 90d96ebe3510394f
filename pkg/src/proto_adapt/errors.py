"""Exception types raised across proto_adapt."""


class ProtoAdaptError(Exception):
    """Base class for all errors raised by proto_adapt."""


class ShapeError(ProtoAdaptError, ValueError):
    """Array shapes or lengths do not agree."""


class DataError(ProtoAdaptError):
    """A dataset file is missing, truncated or inconsistent."""


class CheckpointError(ProtoAdaptError):
    """A checkpoint cannot be read or does not match the expected model."""


class ConfigError(ProtoAdaptError):
    """A configuration file is malformed or holds invalid values."""
