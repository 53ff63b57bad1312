"""Exception hierarchy shared by all riesense modules."""


class RieSenseError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(RieSenseError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class DegenerateError(RieSenseError, ArithmeticError):
    """A computation hit a configuration where it is numerically undefined."""


class ContractError(RieSenseError, ValueError):
    """A caller violated an operation's precondition (shape, label, range)."""


class FormatError(RieSenseError):
    """A binary file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class NumericalFailure(RieSenseError, FloatingPointError):
    """Training produced a non-finite loss."""


class ConfigError(RieSenseError, ValueError):
    """An experiment configuration file or override is invalid."""
