"""Service layer exports."""

from . import (
    artifacts,
    contact_sensing,
    controllers,
    geometry,
    harness,
    kinematics,
    metrics,
    qp_solver,
    quasistatic,
    trajectory,
)

__all__ = [
    "artifacts",
    "contact_sensing",
    "controllers",
    "geometry",
    "harness",
    "kinematics",
    "metrics",
    "qp_solver",
    "quasistatic",
    "trajectory",
]
