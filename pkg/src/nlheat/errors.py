"""Exception hierarchy shared by every module of the package."""


class NlheatError(Exception):
    """Base class for all errors raised by nlheat."""


class GridMismatchError(NlheatError, ValueError):
    """Two fields live on different grids."""


class DomainError(NlheatError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateStateError(NlheatError, ValueError):
    """A state (or pair of states) has no meaningful normalization or gap."""


class SolverError(NlheatError, RuntimeError):
    """A linear solve failed to reach its residual contract."""


class PositivityLossError(NlheatError, RuntimeError):
    """A state that must stay strictly positive reached min <= 0."""

    def __init__(self, t, min_value, message=None):
        self.t = t
        self.min_value = min_value
        super().__init__(message or f"positivity lost at t={t:.6g} (min u = {min_value:.3e})")


class NonConvergenceError(NlheatError, RuntimeError):
    """An iteration hit its cap before reaching tolerance."""

    def __init__(self, message, last_factor=float("nan"), distances=()):
        self.last_factor = last_factor
        self.distances = tuple(distances)
        super().__init__(message)


class NotConvergedError(NlheatError, RuntimeError):
    """A trajectory tail has not settled enough to extract a steady state."""

    def __init__(self, message, tail_variation):
        self.tail_variation = tail_variation
        super().__init__(message)


class ConfigurationError(NlheatError, ValueError):
    """Inputs are individually valid but unusable together."""


class OracleError(NlheatError, RuntimeError):
    """An independent oracle could not produce its reference value."""


class ConfigParseError(NlheatError, ValueError):
    """A config document is malformed; carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
