"""Exception hierarchy shared by every module.

The CLI maps ``DataError`` subclasses to exit code 3 and ``ConfigError``
subclasses to exit code 4.
"""


class MvsenseError(Exception):
    """Base class for all errors raised by this package."""


class DataError(MvsenseError):
    pass


class ConfigError(MvsenseError):
    pass


class InvalidInput(DataError, ValueError):
    pass


class InvalidConfig(ConfigError, ValueError):
    pass


class InvalidSpec(ConfigError, ValueError):
    pass


class ParseError(DataError):
    """Bitstream ended early or a structural field could not be read."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CorruptStream(DataError):
    pass


class NoTemporalData(DataError):
    """The stream carries no P-frames, so there is no motion to extract."""


class UndefinedKappa(DataError, ArithmeticError):
    pass


class ShapeMismatch(ConfigError, ValueError):
    pass
