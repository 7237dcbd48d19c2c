"""Custom exception hierarchy for contactaware."""
from __future__ import annotations


class ContactAwareError(Exception):
    """Base exception for all contactaware errors."""


class ConfigurationError(ContactAwareError):
    """Configuration-related errors."""


class ValidationError(ContactAwareError):
    """Input validation errors."""


class RankDeficiencyError(ValidationError):
    """A Jacobian or its weighted Gram matrix is singular."""


class QpSolverError(ContactAwareError):
    """The QP is structurally unsolvable (degenerate or indefinite)."""


class SimulationError(ContactAwareError):
    """The ground-truth simulator failed to converge."""


class ScenarioError(ContactAwareError):
    """Scenario files that cannot be loaded or validated."""


class ArtifactError(ContactAwareError):
    """Run artifacts could not be written or read back."""
