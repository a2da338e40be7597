"""Exception types shared across the planning stack."""


class PlanningError(Exception):
    """Base class for recoverable planning failures."""


class NumericalError(PlanningError, ArithmeticError):
    """A loss, gradient or linear solve produced a non-finite value."""


class NoSequenceError(PlanningError):
    """Beam search finished without any goal-terminated sequence."""


class GoalSamplingError(PlanningError):
    """No valid goal configuration could be drawn from a task-space region."""


class ScenarioError(ValueError):
    """A scenario file could not be parsed or failed validation."""
