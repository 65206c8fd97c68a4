"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CSDError(Exception):
    """Base class for every error raised by csdwave."""


class DomainError(CSDError, ValueError):
    """A function was evaluated outside its physical domain."""


class SingularJetError(DomainError):
    """A power-series operation hit a zero or invalid constant term."""


class NoConvergenceError(CSDError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class IntegrationError(CSDError):
    """Base for integrator failures; carries the last valid state."""

    def __init__(self, message, t=None, y=None):
        super().__init__(message)
        self.t = t
        self.y = y


class StepSizeError(IntegrationError):
    """Step size underflow (stiffness or blow-up)."""


class BudgetError(IntegrationError):
    """Maximum number of steps exceeded."""


class BracketError(CSDError):
    """A root-finding bracket shows no usable sign change."""


class ResonanceError(CSDError):
    """Order-k linear system of the parameterization method is near-singular."""

    def __init__(self, message, order=None):
        super().__init__(message)
        self.order = order


class SpectrumError(CSDError):
    """Eigenvalue structure differs from what the method requires."""


class OrderTooLowError(CSDError):
    """No parameter value meets the invariance-error threshold."""


class NoHitError(CSDError):
    """A manifold branch did not reach its Poincare section."""

    def __init__(self, message, c=None, sign=0, state=None):
        super().__init__(message)
        self.c = c
        self.sign = sign
        self.state = state


class ManifoldEscapeError(NoHitError):
    """Backward-integrated stable manifold escaped before reaching the section."""


class NoWaveError(CSDError):
    """A cell never crossed the depolarization threshold."""


class SimulationError(CSDError):
    """Failure inside a network simulation (e.g. algebraic solve)."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NearSingularError(DomainError):
    """A derivative formula was evaluated too close to a fold."""
