"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`QVarError`.
The two intermediate classes decide the CLI exit code: :class:`InputError`
maps to 1 and :class:`NumericalError` to 2.
"""

from __future__ import annotations


class QVarError(Exception):
    """Base class for all package errors."""


class InputError(QVarError, ValueError):
    """Malformed or inconsistent user input."""


class NumericalError(QVarError, ArithmeticError):
    """A computation could not be carried out on the given data."""


class InvalidRatioError(InputError):
    pass


class InvalidBaseError(InputError):
    pass


class LatticeOverflowError(InputError, OverflowError):
    pass


class ValidationError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at position {position}")
        self.position = position


class ArityError(InputError):
    pass


class MismatchedLatticeError(InputError):
    pass


class DomainTooShortError(NumericalError):
    """A stencil reaches outside the indices a lattice function covers."""


class EvalDomainError(NumericalError):
    """Expression evaluated outside its domain (log of nonpositive, 0 division, ...)."""


class DegenerateLagrangianError(NumericalError):
    """The Euler-Lagrange residual does not depend on the newest lattice value."""


class NoBracketError(NumericalError):
    pass


class LineSearchStallError(NumericalError):
    pass
