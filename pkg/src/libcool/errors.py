"""Exception types shared across the package."""


class LibcoolError(Exception):
    """Base class for all package errors."""


class ParameterError(LibcoolError, ValueError):
    """An input field is missing, non-finite or out of range.

    The offending field is available as ``field``.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DivergentOccupation(LibcoolError):
    """Heating outpaces cooling (A- <= A+), no finite steady state."""


class ZeroCoupling(LibcoolError):
    """The libration-cavity coupling vanishes, the occupation is undefined."""


class NonUniqueSteadyState(LibcoolError):
    """The generator has a null space of dimension larger than one."""


class NoSteadyState(LibcoolError):
    """The generator has no normalizable steady state."""


class CutoffError(LibcoolError):
    """A Fock-space truncation is too small, too large, or unconverged."""


class StepSizeError(LibcoolError):
    """An integrator step is too coarse, or would need too many substeps."""


class InsufficientStatistics(LibcoolError):
    """A Monte Carlo estimate is too noisy to be reported."""


class NonphysicalAsymmetry(LibcoolError):
    """Anti-Stokes area is not smaller than the Stokes area."""


class FitError(LibcoolError):
    """A least-squares fit failed, did not converge, or is ambiguous."""


class BudgetExceeded(LibcoolError):
    """A requested computation exceeds the configured desk-scale budget."""
