"""Exception types shared across the stack."""


class NavError(Exception):
    """Base class for all groundnav errors."""


class ValidationError(NavError):
    """A value violates a documented invariant."""


class ParseError(NavError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(NavError):
    """Array dimensions do not match the paired camera or frame."""


class OutOfBoundsError(NavError):
    """Cell index outside the grid."""


class PlanningError(NavError):
    """Base class for global-planner failures."""


class StartInvalid(PlanningError):
    """Plan start cell is lethal or outside the costmap."""


class GoalInvalid(PlanningError):
    """Plan goal cell is lethal or outside the costmap."""


class NoPath(PlanningError):
    """Goal is unreachable on the costmap."""


class AllBlocked(NavError):
    """Every candidate command is infeasible; caller should run recovery."""


class NonFiniteLoss(NavError):
    """Training aborted because the loss became NaN or infinite."""


class ConfigError(NavError):
    """Invalid pipeline configuration."""
