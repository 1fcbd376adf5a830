"""
Error types raised by atr_qkd.

Everything derives from :class:`AtrError` so callers (and the CLI) can catch
the whole family in one place.
"""

__author__ = "John Conwell"
__copyright__ = "John Conwell"
__license__ = "MIT"


class AtrError(Exception):
    """Base class for all atr_qkd errors"""


class DataValidationError(AtrError, ValueError):
    """Input data breaks a documented invariant"""


class AnchorParseError(DataValidationError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConfigError(AtrError, ValueError):
    """Session, attack or monitor configuration is invalid"""


class OutOfDomainError(AtrError, ValueError):
    def __init__(self, delay_ns, domain_ns):
        lo, hi = domain_ns
        super().__init__(f"delay {delay_ns!r} ns is outside the modeled range [{lo}, {hi}] ns")
        self.delay_ns = delay_ns
        self.domain_ns = domain_ns


class UndefinedResultError(AtrError, ArithmeticError):
    """A ratio was requested with a zero denominator"""


class UndefinedQberError(UndefinedResultError):
    pass


class FitFailure(AtrError):
    """The surface fit did not converge; carries the best-effort report and surface"""

    def __init__(self, message, report=None, surface=None):
        super().__init__(message)
        self.report = report
        self.surface = surface


class InfeasibleRateError(AtrError):
    def __init__(self, required_duty, shortfall):
        super().__init__(
            f"attack cannot reach the normal click rate: required duty {required_duty:.4f} > 1, "
            f"short by {shortfall:.1f} counts/s")
        self.required_duty = required_duty
        self.shortfall = shortfall


class NoSolutionError(AtrError):
    """The attack optimizer found no feasible grid point"""
