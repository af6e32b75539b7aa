"""Exception and warning types raised across the package."""

__all__ = [
    "RiskPlanError",
    "InvalidModel",
    "DimensionMismatch",
    "ImpossibleObservation",
    "InvalidDistribution",
    "NonFiniteValue",
    "EmptySamples",
    "IterationCap",
    "TooLarge",
    "SubproblemNotConverged",
    "NoFeasibleLayout",
    "ConfigError",
    "SearchDidNotBracket",
]


class RiskPlanError(Exception):
    """Base class for all package errors."""


class InvalidModel(RiskPlanError, ValueError):
    """A model failed validation. ``report`` holds the violations."""

    def __init__(self, report):
        self.report = list(report)
        lines = "\n".join(f"  - {v}" for v in self.report[:20])
        more = "" if len(self.report) <= 20 else f"\n  ... {len(self.report) - 20} more"
        super().__init__(f"model has {len(self.report)} violation(s):\n{lines}{more}")


class DimensionMismatch(RiskPlanError, ValueError):
    pass


class ImpossibleObservation(RiskPlanError, ValueError):
    pass


class InvalidDistribution(RiskPlanError, ValueError):
    pass


class NonFiniteValue(RiskPlanError, ValueError):
    pass


class EmptySamples(RiskPlanError, ValueError):
    pass


class IterationCap(RiskPlanError, RuntimeError):
    """A fixed-point iteration hit its iteration cap.

    ``partial`` carries the last iterate so callers can still inspect it.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class TooLarge(RiskPlanError, ValueError):
    pass


class SubproblemNotConverged(RiskPlanError, RuntimeError):
    def __init__(self, message, best_epsilon=0.0):
        super().__init__(message)
        self.best_epsilon = best_epsilon


class NoFeasibleLayout(RiskPlanError, RuntimeError):
    pass


class ConfigError(RiskPlanError, ValueError):
    pass


class SearchDidNotBracket(RuntimeWarning):
    """The EVaR search hit its zeta cap; the returned value is an upper estimate."""
