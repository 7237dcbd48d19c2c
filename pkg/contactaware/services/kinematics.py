"""Planar N-link arm forward kinematics and point Jacobians."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from contactaware.core.exceptions import ValidationError
from contactaware.core.types import FloatArray

logger = logging.getLogger(__name__)


def _as_vector(values: Sequence[float] | FloatArray, name: str) -> FloatArray:
    array = np.array(values, dtype=float)
    if array.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} must be finite")
    return array


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Planar revolute arm driven by a diagonal joint stiffness controller."""

    link_lengths: FloatArray
    joint_stiffness: FloatArray
    rate_bound: FloatArray
    joint_limits: Optional[FloatArray] = None
    base_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        lengths = _as_vector(self.link_lengths, "link_lengths")
        n = lengths.size
        if n < 1:
            raise ValidationError("a robot needs at least one joint")
        if np.any(lengths <= 0):
            raise ValidationError("link lengths must be positive")

        stiffness = _as_vector(self.joint_stiffness, "joint_stiffness")
        if stiffness.size != n:
            raise ValidationError(f"joint_stiffness needs {n} entries, got {stiffness.size}")
        if np.any(stiffness <= 0):
            raise ValidationError("joint stiffness entries must be positive")

        rate = np.array(self.rate_bound, dtype=float)
        rate = np.full(n, float(rate)) if rate.ndim == 0 else _as_vector(rate, "rate_bound")
        if rate.size != n:
            raise ValidationError(f"rate_bound needs {n} entries, got {rate.size}")
        if np.any(rate <= 0):
            raise ValidationError("rate_bound must be positive elementwise")

        limits = None
        if self.joint_limits is not None:
            limits = np.array(self.joint_limits, dtype=float)
            if limits.shape != (n, 2):
                raise ValidationError(f"joint_limits must have shape ({n}, 2)")
            if np.any(limits[:, 0] >= limits[:, 1]):
                raise ValidationError("joint limit intervals must satisfy lower < upper")

        base = tuple(float(v) for v in self.base_pose)
        if len(base) != 3 or not np.all(np.isfinite(base)):
            raise ValidationError("base_pose must be a finite (x, y, theta) triple")

        for name, value in (
            ("link_lengths", lengths),
            ("joint_stiffness", stiffness),
            ("rate_bound", rate),
            ("joint_limits", limits),
            ("base_pose", base),
        ):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_joints(self) -> int:
        return int(self.link_lengths.size)

    @property
    def stiffness_matrix(self) -> FloatArray:
        return np.diag(self.joint_stiffness)

    def check_configuration(self, q: Sequence[float] | FloatArray, name: str = "q") -> FloatArray:
        """Return ``q`` as a float vector, raising on a dimension mismatch."""

        vector = _as_vector(q, name)
        if vector.size != self.n_joints:
            raise ValidationError(f"{name} has {vector.size} entries, model has {self.n_joints} joints")
        return vector

    def clamp_to_limits(self, q: FloatArray) -> FloatArray:
        if self.joint_limits is None:
            return q
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])


@dataclass(frozen=True)
class BodyPoint:
    """A material point on the arm, fixed in the frame of ``link_index`` (1-based)."""

    link_index: int
    local_offset: tuple[float, float]

    def __post_init__(self) -> None:
        offset = tuple(float(v) for v in self.local_offset)
        if len(offset) != 2 or not np.all(np.isfinite(offset)):
            raise ValidationError("local_offset must be a finite 2-D point")
        object.__setattr__(self, "local_offset", offset)


@dataclass(frozen=True)
class LinkFrame:
    """World pose of one link: ``origin`` is the link's joint position."""

    angle: float
    origin: FloatArray

    @property
    def rotation(self) -> FloatArray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def to_world(self, offset: Sequence[float]) -> FloatArray:
        return self.origin + self.rotation @ np.asarray(offset, dtype=float)


def _check_point(model: RobotModel, point: BodyPoint) -> None:
    if not 1 <= point.link_index <= model.n_joints:
        raise ValidationError(
            f"link_index {point.link_index} is outside [1, {model.n_joints}]"
        )


def forward_kinematics(model: RobotModel, q: Sequence[float] | FloatArray) -> list[LinkFrame]:
    """Return the world frame of every link, proximal first."""

    q = model.check_configuration(q)
    x, y, theta = model.base_pose
    origin = np.array([x, y])
    angle = theta
    frames: list[LinkFrame] = []
    for length, joint_angle in zip(model.link_lengths, q):
        angle += joint_angle
        frames.append(LinkFrame(angle=float(angle), origin=origin))
        origin = origin + length * np.array([np.cos(angle), np.sin(angle)])
    return frames


def body_point_position(
    model: RobotModel,
    q: Sequence[float] | FloatArray,
    point: BodyPoint,
    frames: Optional[list[LinkFrame]] = None,
) -> FloatArray:
    _check_point(model, point)
    frames = frames if frames is not None else forward_kinematics(model, q)
    return frames[point.link_index - 1].to_world(point.local_offset)


def point_jacobian(
    model: RobotModel,
    q: Sequence[float] | FloatArray,
    point: BodyPoint,
    frames: Optional[list[LinkFrame]] = None,
) -> FloatArray:
    """2×n_q Jacobian of the world position of ``point``.

    Column j is the planar cross product ẑ × (p − o_j); joints distal to the
    point's link leave it at rest and keep zero columns.
    """

    _check_point(model, point)
    frames = frames if frames is not None else forward_kinematics(model, q)
    position = frames[point.link_index - 1].to_world(point.local_offset)
    jacobian = np.zeros((2, model.n_joints))
    for j in range(point.link_index):
        lever = position - frames[j].origin
        jacobian[0, j] = -lever[1]
        jacobian[1, j] = lever[0]
    return jacobian


def end_effector_point(model: RobotModel) -> BodyPoint:
    return BodyPoint(model.n_joints, (float(model.link_lengths[-1]), 0.0))


def sample_link_points(
    model: RobotModel,
    points_per_link: int,
    links: Optional[Sequence[int]] = None,
) -> list[BodyPoint]:
    """Evenly spaced axis points at L·k/n, k = 1..n, so every sampled link includes its tip."""

    if points_per_link < 1:
        raise ValidationError("points_per_link must be at least 1")
    selected = list(links) if links is not None else list(range(1, model.n_joints + 1))
    points: list[BodyPoint] = []
    for link in selected:
        if not 1 <= link <= model.n_joints:
            raise ValidationError(f"link {link} is outside [1, {model.n_joints}]")
        length = float(model.link_lengths[link - 1])
        points.extend(
            BodyPoint(link, (length * k / points_per_link, 0.0))
            for k in range(1, points_per_link + 1)
        )
    return points
