"""Exception hierarchy shared by every module."""


class PdrAnpgError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(PdrAnpgError, ValueError):
    """An argument is outside its admissible range."""


class CmdpValidationError(InvalidParameterError):
    """A CMDP document failed validation.

    ``path`` is the offending index path, e.g. ``"transition[1][0]"``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class DomainError(PdrAnpgError, ValueError):
    """A quantity is undefined for the given input (e.g. log of a zero probability)."""


class InfeasibleError(PdrAnpgError):
    """The constraint J_c >= 0 cannot be met by any policy."""

    def __init__(self, max_jc):
        self.max_jc = float(max_jc)
        super().__init__(f"constraint infeasible: max attainable J_c = {self.max_jc:.6g} < 0")


class ConvergenceError(PdrAnpgError, RuntimeError):
    """An iterative oracle routine did not converge."""

    def __init__(self, message, residuals=None):
        self.residuals = residuals or {}
        super().__init__(message)


class ScheduleInfeasibleError(PdrAnpgError):
    """The hyperparameter schedule violates a precondition (e.g. eta * tau >= 1)."""


class DivergedError(PdrAnpgError, FloatingPointError):
    """An iterate became non-finite."""
