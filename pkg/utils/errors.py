from __future__ import annotations

from typing import Optional


class BilevelError(Exception):
    """Base class for every error raised by the solver stack."""


class NumericalError(BilevelError):
    """A numerical routine could not deliver its post-condition."""


class NonInterior(NumericalError):
    def __init__(self, message: str = "point is not strictly interior", min_slack: Optional[float] = None):
        if min_slack is not None:
            message = f"{message} (min slack {min_slack:.3e})"
        super().__init__(message)
        self.min_slack = min_slack


class FactorizationFailure(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    def __init__(self, message: str, iterations: Optional[int] = None, residual: Optional[float] = None):
        details = []
        if iterations is not None:
            details.append(f"iterations={iterations}")
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonConvexityDetected(NumericalError):
    """Raised when a Newton step meets an indefinite Hessian (lambda too small)."""


class MissingBounds(BilevelError):
    pass


class NotSPD(BilevelError, ValueError):
    pass


class MissingSecondOrderOracle(BilevelError):
    pass


class InvalidParameter(BilevelError, ValueError):
    pass


class InvalidInput(BilevelError, ValueError):
    pass


class InvalidConfig(BilevelError, ValueError):
    pass


class DimensionMismatch(BilevelError, ValueError):
    pass
