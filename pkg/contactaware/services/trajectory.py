"""Reference trajectories sampled by the control loop (first-order hold between knots)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from contactaware.core.exceptions import ValidationError
from contactaware.core.types import FloatArray


def _interpolate(times: FloatArray, values: FloatArray, t: float) -> FloatArray:
    if t <= times[0]:
        return values[0].copy()
    if t >= times[-1]:
        return values[-1].copy()
    index = int(np.searchsorted(times, t, side="right")) - 1
    span = times[index + 1] - times[index]
    fraction = (t - times[index]) / span
    return values[index] + fraction * (values[index + 1] - values[index])


def _check_knots(times: Sequence[float], values: Sequence[Sequence[float]], width: int, name: str) -> tuple[FloatArray, FloatArray]:
    times = np.array(times, dtype=float)
    values = np.array(values, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValidationError(f"{name} needs at least one knot")
    if values.shape != (times.size, width):
        raise ValidationError(f"{name} knots must have shape ({times.size}, {width}), got {values.shape}")
    if np.any(np.diff(times) <= 0):
        raise ValidationError(f"{name} knot times must be strictly increasing")
    if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
        raise ValidationError(f"{name} knots must be finite")
    times.setflags(write=False)
    values.setflags(write=False)
    return times, values


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """Joint-space knots; held constant outside the knot span."""

    times: FloatArray
    knots: FloatArray

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        width = knots.shape[1] if knots.ndim == 2 else -1
        times, knots = _check_knots(self.times, knots, width, "joint trajectory")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "knots", knots)

    @property
    def n_joints(self) -> int:
        return int(self.knots.shape[1])

    @property
    def initial(self) -> FloatArray:
        return self.knots[0].copy()

    def sample(self, t: float) -> FloatArray:
        return _interpolate(self.times, self.knots, t)


@dataclass(frozen=True, eq=False)
class TaskTrajectory:
    """End-effector position waypoints plus the joint configuration the run starts from."""

    times: FloatArray
    positions: FloatArray
    initial_q: FloatArray

    def __post_init__(self) -> None:
        times, positions = _check_knots(self.times, self.positions, 2, "task trajectory")
        initial_q = np.array(self.initial_q, dtype=float)
        if initial_q.ndim != 1 or not np.all(np.isfinite(initial_q)):
            raise ValidationError("initial_q must be a finite vector")
        initial_q.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "initial_q", initial_q)

    @property
    def initial(self) -> FloatArray:
        return self.initial_q.copy()

    def sample_position(self, t: float) -> FloatArray:
        return _interpolate(self.times, self.positions, t)


def reference_at(
    trajectory: JointTrajectory | TaskTrajectory,
    t: float,
    q_hold: FloatArray,
) -> tuple[FloatArray, Optional[FloatArray]]:
    """(q_ref, p_ref) at time ``t``; task trajectories report ``q_hold`` as their joint reference."""

    if isinstance(trajectory, TaskTrajectory):
        return np.array(q_hold, dtype=float), trajectory.sample_position(t)
    return trajectory.sample(t), None
