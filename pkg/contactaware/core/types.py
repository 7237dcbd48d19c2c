"""Shared type definitions for contactaware."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]

# (collision point index, obstacle index); stable across ticks for one scene.
ContactKey = Tuple[int, int]

SolverStatus = Literal["optimal", "infeasible", "max_iterations", "closed_form", "hold"]


@dataclass(frozen=True)
class SolverDiagnostics:
    """Immutable summary of one controller solve."""

    status: SolverStatus = "closed_form"
    iterations: int = 0
    kkt_residual: float = 0.0
    runtime_s: float = 0.0


@dataclass(frozen=True)
class StepLog:
    """One control-tick record.

    ``q``, ``q_cmd`` and ``q_ref`` are the post-step joint state, the command
    issued at this tick and the reference it tracked. Per-contact forces are
    keyed by :data:`ContactKey`.
    """

    tick: int
    time: float
    q: FloatArray
    q_cmd: FloatArray
    q_ref: FloatArray
    p_ref: Optional[FloatArray]
    true_forces: Dict[ContactKey, float] = field(default_factory=dict)
    estimated_forces: Dict[ContactKey, float] = field(default_factory=dict)
    lambda_pred: Dict[ContactKey, float] = field(default_factory=dict)
    force_true_norm: float = 0.0
    force_est_norm: float = 0.0
    force_pred_norm: float = 0.0
    e_lambda: float = 0.0
    w: float = 0.0
    tracking_error: float = 0.0
    v_q_norm: float = 0.0
    projection_residual: float = 0.0
    force_gain: float = 0.0
    solver: SolverDiagnostics = field(default_factory=SolverDiagnostics)
    fault: Optional[str] = None

    @property
    def in_contact(self) -> bool:
        return self.force_true_norm > 0.0
