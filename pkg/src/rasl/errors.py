"""Exception hierarchy shared by every module of the package."""


class RaslError(Exception):
    """Base class for all package errors."""


class ShapeError(RaslError, ValueError):
    """Operand shapes are incompatible, or an extent is not positive."""


class AxisError(RaslError, ValueError):
    """A reduction axis is out of range."""


class DomainError(RaslError, ValueError):
    """An input lies outside an operation's mathematical domain."""


class NumericError(RaslError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class InvalidCallError(RaslError, RuntimeError):
    """An operation was invoked in an unsupported state."""


class InvalidArgumentError(RaslError, ValueError):
    """A scalar argument is out of its permitted range."""


class LengthError(RaslError, ValueError):
    """A temporal length is too short for the requested operation."""


class StateError(RaslError, RuntimeError):
    """Optimizer or model state does not match the parameter registry."""


class FormatError(RaslError, ValueError):
    """A binary file is corrupt, truncated, or of an unknown version."""


class ConfigError(RaslError, ValueError):
    """A configuration file or value is invalid."""
