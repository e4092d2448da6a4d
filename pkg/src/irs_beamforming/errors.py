"""Exceptions raised across the simulator.

Every error derives from ``IrsError`` and from the builtin exception that best describes it, so callers
may catch either the package-specific or the generic type.
"""


class IrsError(Exception):
    """Base class for all simulator errors."""


class ConfigValidationError(IrsError, ValueError):
    """A configuration violates one or more invariants.

    Each violated constraint is listed individually in ``violations`` as ``"<field>: <message>"``.
    """

    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        super().__init__("Invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


class DimensionMismatchError(IrsError, ValueError):
    """Array shapes do not agree with the scenario dimensions."""


class PlacementError(IrsError, ValueError):
    """Two nodes of the deployment share a position."""


class DegenerateRetractionError(IrsError, ArithmeticError):
    """A retraction hit a zero entry or a zero row; the caller should shrink the step."""


class SearchDirectionError(IrsError, ValueError):
    """A line search was handed a direction that is not an ascent direction."""


class PowerSolverError(IrsError, RuntimeError):
    """The geometric program of a condensation round could not be solved."""


class TangentSpaceMismatchError(IrsError, ValueError):
    """Two tangent vectors attached to different base points were combined."""


class ExperimentError(IrsError, RuntimeError):
    """No trial of a sweep produced a result."""
