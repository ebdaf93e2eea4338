"""Exception taxonomy shared across the solver modules.

Every failure mode a caller is expected to branch on gets its own class.
Solvers that give up mid-iteration attach their best iterate so diagnostics
survive the raise.
"""

from __future__ import annotations


class EnergyEconError(Exception):
    """Base class for all library-specific failures."""


class ValidationError(EnergyEconError):
    """A scenario or problem instance violates a structural rule."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid scenario: {lines}")


class UtilityDomainError(EnergyEconError, ValueError):
    """Utility evaluation requested outside its domain (non-positive quantity)."""


class NonFiniteMarginalError(EnergyEconError, ArithmeticError):
    """A marginal productivity or marginal requirement is undefined at the point."""


class NonFiniteEvaluationError(EnergyEconError, ArithmeticError):
    """A user-supplied callable returned NaN or infinity."""


class InfeasibleError(EnergyEconError):
    """No plan satisfies the constraints (targets exceed what endowments allow)."""


class NoConvergenceError(EnergyEconError):
    """An iterative solve ran out of iterations.

    Carries the best iterate seen and its residual so callers can inspect or
    emit partial output.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class InconsistentAssignmentsError(EnergyEconError):
    """Requested energy assignments imply different over-assignment factors per good."""

    def __init__(self, message, implied_theta=None):
        super().__init__(message)
        self.implied_theta = implied_theta


class InsufficientSurplusError(EnergyEconError):
    """Zero energy surplus cannot honor a positive assignment request."""


class MissingHistoryError(EnergyEconError):
    """A prime mover's build energy is unrecorded, so embodied charges are undefined."""


class DegenerateFitError(EnergyEconError):
    """A regression was requested on data with no variation in the regressor."""


class NoFeasibleGridPointError(EnergyEconError):
    """Every grid point violated the feasibility predicate."""


class FiatMoneyError(EnergyEconError):
    """Synthetic-transfer operations are undefined when money has no energy cost."""


class IoFailure(EnergyEconError, OSError):
    """Reading or writing a report/scenario file failed."""
