"""Exception types raised across the package.

Everything derives from :class:`MPBenchError`. The CLI maps
:class:`ValidationError` subclasses to exit code 1 and ``OSError`` to 2.
"""


class MPBenchError(Exception):
    """Base class for all package errors."""


class ValidationError(MPBenchError, ValueError):
    """Input violates a documented precondition."""


# grid / file format
class BadMagic(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class NonFiniteObjective(ValidationError):
    pass


class BadPatch(ValidationError):
    pass


# geography
class OutOfBounds(ValidationError):
    pass


class UnknownVariable(ValidationError):
    pass


class UnknownLevel(ValidationError):
    pass


# records / QA / scoring
class PoolExhausted(ValidationError):
    pass


class InvalidRecord(ValidationError):
    pass


class Unparseable(ValidationError):
    pass


class IdMismatch(ValidationError):
    pass
