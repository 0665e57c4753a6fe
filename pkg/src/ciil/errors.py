"""Exception hierarchy shared by every subpackage."""


class CiilError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(CiilError, ValueError):
    pass


class ConfigError(CiilError, ValueError):
    pass


class UsageError(CiilError, RuntimeError):
    pass


class CheckpointError(CiilError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class ProtocolError(CiilError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class LogIntegrityError(CiilError):
    pass
