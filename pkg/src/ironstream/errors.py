"""Exception hierarchy shared across the emulator."""


class IronstreamError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(IronstreamError, ValueError):
    """Inconsistent or out-of-menu configuration."""


class DomainError(IronstreamError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class AddressingError(IronstreamError, KeyError):
    """Register address outside the documented map."""

    def __str__(self):
        return Exception.__str__(self)


class CodecError(IronstreamError, ValueError):
    """ADC code outside the 24-bit two's-complement range."""


class ProtocolMisuseError(IronstreamError, RuntimeError):
    """An operation was used against state that cannot support it."""
