"""Exception hierarchy shared across the solver suite."""


class RelarbError(Exception):
    """Base class for all package errors."""


class DomainError(RelarbError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigError(RelarbError, ValueError):
    """A scenario configuration is structurally invalid."""


class InfeasibleScenarioError(RelarbError):
    """A feasibility condition on preferences/initial wealths is violated."""


class SingularMarketError(RelarbError):
    """A volatility matrix is singular (or numerically degenerate) where it must be invertible."""


class SimulationError(RelarbError):
    """A simulation produced a non-finite coefficient or state.

    Carries the time-step index at which the failure occurred.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DeflatorError(SimulationError):
    """Deflator construction failed, e.g. singular sigma along a path."""


class AdmissibilityError(RelarbError):
    """A strategy left the simplex beyond tolerance in strict mode."""
