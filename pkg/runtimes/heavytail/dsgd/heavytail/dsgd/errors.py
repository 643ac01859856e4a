"""heavytail.dsgd errors."""

from enum import Enum
from typing import Dict, Type


class HeavyTailError(Exception):
    """Base exception for heavytail.dsgd."""


class ConfigError(HeavyTailError):
    """Scenario file cannot be parsed or validated."""


class InvalidGraphError(HeavyTailError, ValueError):
    """Graph parameters violate the family constraints."""


class DeltaOutOfRangeError(HeavyTailError, ValueError):
    """Mixing step delta outside [0, 2 / lambda_max(L))."""


class DimensionMismatchError(HeavyTailError, ValueError):
    """Operands do not agree on N or d."""


class PreconditionError(HeavyTailError, ValueError):
    """Hypotheses of a theoretical quantity are not met."""


class UnstableBaseError(PreconditionError):
    """rho_hat of the disconnected system is not negative."""


class InternalError(HeavyTailError, RuntimeError):
    """Invariant that cannot fail for valid input did fail."""


class NumericalError(HeavyTailError):
    """A numerical procedure did not produce a usable value."""


class NoRootReason(str, Enum):
    unstable = "unstable"
    light = "light"


class NoRootError(NumericalError):
    """h_hat(s) = 1 has no positive root in the searched range."""

    def __init__(self, reason: NoRootReason, message: str = ""):
        self.reason = NoRootReason(reason)
        super().__init__(message or f"no root ({self.reason.value})")


class QuadratureError(NumericalError):
    """Adaptive quadrature missed its tolerance."""


class InsufficientSamplesError(NumericalError):
    """Not enough non-diverged samples for tail estimation."""


class DegenerateInputError(NumericalError):
    """Input has ties or zeros the procedure cannot resolve."""


EXIT_CODES: Dict[Type[Exception], int] = {
    ConfigError: 2,
    InvalidGraphError: 2,
    DeltaOutOfRangeError: 2,
    DimensionMismatchError: 2,
    PreconditionError: 2,
    NumericalError: 3,
    InternalError: 1,
}


def exit_code_for(exc: BaseException) -> int:
    """Exit status for an exception, resolved along its MRO."""
    for klass in type(exc).__mro__:
        if klass in EXIT_CODES:
            return EXIT_CODES[klass]
    return 1
