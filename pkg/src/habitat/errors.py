"""Exception types raised by the solver library."""


class HabitatError(Exception):
    """Base class for all library errors."""


class ContractViolation(HabitatError, ValueError):
    """Malformed input: dimension mismatch, bad parameters, broken invariants."""


class PreconditionError(HabitatError, ValueError):
    """An operation was called outside its documented domain."""


class ArbitrageError(HabitatError):
    """A node admits an arbitrage; carries the offending node and portfolio."""

    def __init__(self, message, node=None, portfolio=None):
        super().__init__(message)
        self.node = node
        self.portfolio = portfolio


class InfeasibleError(HabitatError):
    """The requested (x, z) pair admits no feasible plan."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate or {}


class RoutingError(HabitatError):
    """Replicable and non-replicable markets take different dual routes."""


class SolverFailure(HabitatError):
    """An internal engine did not reach an optimal status."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status
