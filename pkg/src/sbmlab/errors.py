"""Exception hierarchy shared by the numerical modules."""

from __future__ import annotations


class SbmError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class DomainError(SbmError, ValueError):
    """Argument outside the real branch of a closed-form transform."""


class InconsistentPhase(SbmError):
    """No phase condition set holds for the given spectrum and hyperparameters."""


class NonConvergence(SbmError):
    """An iterative solver exhausted its budget."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StepTooLarge(SbmError):
    """Time step violates the stability guard."""


class StabilityViolation(SbmError):
    """A stochastic integration step blew past the guard."""


class CubicDegeneracy(SbmError):
    """Roots of the perturbed-spectrum cubic coalesce."""


class RootBracketFailure(SbmError):
    """A threshold equation has no root in its bracket."""


class NoFiniteTime(SbmError):
    """A requested time is infinite."""


class DegenerateDenominator(SbmError):
    """A closed-form ratio has a vanishing denominator."""


class ConfigError(SbmError):
    """Bad CLI configuration."""


class ApproximationDomain(UserWarning):
    """A closed form is evaluated outside its approximation regime."""
