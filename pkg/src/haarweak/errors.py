"""Exception hierarchy shared by all modules.

Validation problems subclass :class:`ParameterError` (CLI exit code 1);
numerical failures subclass :class:`NumericalError` (CLI exit code 2).
"""


class ParameterError(ValueError):
    """Invalid input parameters or configuration."""


class DomainError(ParameterError):
    """Input outside the domain of a special function (e.g. non-finite)."""


class NumericalError(ArithmeticError):
    """A numerical routine could not deliver the requested accuracy."""


class AccuracyError(NumericalError):
    """Quadrature or convolution failed its accuracy self-check."""


class IntegrandError(NumericalError):
    """An integrand returned a non-finite value at some abscissa."""

    def __init__(self, message: str, abscissa: float):
        super().__init__(f"{message} (at abscissa {abscissa!r})")
        self.abscissa = abscissa


class CoercivityError(NumericalError):
    """The optimizer left, or could not certify, the coercivity box."""


class CurvatureError(NumericalError):
    """Hessian too ill-conditioned to invert reliably."""


class ScanError(NumericalError):
    """Threshold bisection found no sign change in its bracket."""
