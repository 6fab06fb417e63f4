"""Exception hierarchy shared by the oracle, the closed forms and the engine."""


class QiCloakError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(QiCloakError, ValueError):
    pass


class InvalidDimensionError(QiCloakError, ValueError):
    pass


class DimensionMismatchError(QiCloakError, ValueError):
    pass


class TruncationOverflowError(QiCloakError, ArithmeticError):
    """The Fock cutoff needed to reach the tail-mass target exceeds the cap."""


class CapacityError(QiCloakError, MemoryError):
    pass


class DegenerateVarianceError(QiCloakError, ArithmeticError):
    pass


class IndeterminateRatioError(QiCloakError, ArithmeticError):
    """Both SNRs vanish, so their quotient carries no information."""


class ZeroSignalError(QiCloakError, ArithmeticError):
    pass


class OutOfRegimeError(QiCloakError, ValueError):
    pass


class NoBoundaryError(QiCloakError, ArithmeticError):
    """Root finder saw no sign change in its bracket."""


class ConfigError(QiCloakError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.key = key
        self.line = line
