"""2D signed-distance queries between arm sample points and static obstacles."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from contactaware.core.exceptions import ValidationError
from contactaware.core.types import FloatArray
from contactaware.services.kinematics import (
    BodyPoint,
    RobotModel,
    forward_kinematics,
)

logger = logging.getLogger(__name__)

# Direction reported when a query sits exactly on a circle centre or capsule axis.
_TIE_BREAK_NORMAL = np.array([1.0, 0.0])


class SignedDistance(NamedTuple):
    distance: float
    normal: FloatArray
    witness: FloatArray


def _as_point(values: Sequence[float] | FloatArray, name: str) -> FloatArray:
    point = np.asarray(values, dtype=float)
    if point.shape != (2,) or not np.all(np.isfinite(point)):
        raise ValidationError(f"{name} must be a finite 2-D point")
    return point


@dataclass(frozen=True, eq=False)
class Obstacle(ABC):
    """Static rigid obstacle.

    ``contact_stiffness`` is the normal penalty stiffness k_n and
    ``tangential_stiffness`` the friction regularization stiffness k_t.
    """

    friction_coefficient: float = field(default=0.0, kw_only=True)
    contact_stiffness: float = field(default=1e4, kw_only=True)
    tangential_stiffness: float = field(default=1e4, kw_only=True)

    def __post_init__(self) -> None:
        if not np.isfinite(self.friction_coefficient) or self.friction_coefficient < 0:
            raise ValidationError("friction_coefficient must be a finite value >= 0")
        if not np.isfinite(self.contact_stiffness) or self.contact_stiffness <= 0:
            raise ValidationError("contact_stiffness must be positive")
        if not np.isfinite(self.tangential_stiffness) or self.tangential_stiffness <= 0:
            raise ValidationError("tangential_stiffness must be positive")

    @abstractmethod
    def signed_distance(self, point: Sequence[float] | FloatArray) -> SignedDistance:
        """Distance (negative inside), outward unit normal and closest boundary point."""


@dataclass(frozen=True, eq=False)
class HalfPlane(Obstacle):
    """Solid region {x : n·x ≤ offset}."""

    normal: FloatArray
    offset: float

    def __post_init__(self) -> None:
        super().__post_init__()
        normal = _as_point(self.normal, "normal")
        norm = float(np.linalg.norm(normal))
        if norm == 0.0:
            raise ValidationError("half-plane normal must be non-zero")
        object.__setattr__(self, "normal", normal / norm)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, point: Sequence[float] | FloatArray) -> SignedDistance:
        p = _as_point(point, "point")
        distance = float(self.normal @ p - self.offset)
        return SignedDistance(distance, self.normal.copy(), p - distance * self.normal)


@dataclass(frozen=True, eq=False)
class Circle(Obstacle):
    center: FloatArray
    radius: float

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "center", _as_point(self.center, "center"))
        if not self.radius > 0:
            raise ValidationError("circle radius must be positive")

    def signed_distance(self, point: Sequence[float] | FloatArray) -> SignedDistance:
        p = _as_point(point, "point")
        return _round_distance(p, self.center, self.radius)


@dataclass(frozen=True, eq=False)
class Capsule(Obstacle):
    """Segment ``start``-``end`` swept by a disc of ``radius``."""

    start: FloatArray
    end: FloatArray
    radius: float

    def __post_init__(self) -> None:
        super().__post_init__()
        object.__setattr__(self, "start", _as_point(self.start, "start"))
        object.__setattr__(self, "end", _as_point(self.end, "end"))
        if not self.radius > 0:
            raise ValidationError("capsule radius must be positive")

    def closest_axis_point(self, p: FloatArray) -> FloatArray:
        axis = self.end - self.start
        length_sq = float(axis @ axis)
        if length_sq == 0.0:
            return self.start.copy()
        t = float(np.clip((p - self.start) @ axis / length_sq, 0.0, 1.0))
        return self.start + t * axis

    def signed_distance(self, point: Sequence[float] | FloatArray) -> SignedDistance:
        p = _as_point(point, "point")
        return _round_distance(p, self.closest_axis_point(p), self.radius)


def _round_distance(p: FloatArray, core: FloatArray, radius: float) -> SignedDistance:
    delta = p - core
    gap = float(np.linalg.norm(delta))
    normal = delta / gap if gap > 0.0 else _TIE_BREAK_NORMAL.copy()
    return SignedDistance(gap - radius, normal, core + radius * normal)


def signed_distance(obstacle: Obstacle, point: Sequence[float] | FloatArray) -> SignedDistance:
    return obstacle.signed_distance(point)


@dataclass(frozen=True, eq=False)
class Scene:
    obstacles: tuple[Obstacle, ...]
    collision_points: tuple[BodyPoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "collision_points", tuple(self.collision_points))

    def validate_for(self, model: RobotModel) -> None:
        for point in self.collision_points:
            if not 1 <= point.link_index <= model.n_joints:
                raise ValidationError(
                    f"collision point on link {point.link_index} but model has {model.n_joints} links"
                )


@dataclass(frozen=True, eq=False)
class ContactCandidate:
    """A (collision point, obstacle) pair close enough to count as touching."""

    point_index: int
    body_point: BodyPoint
    obstacle_index: int
    world_point: FloatArray
    normal: FloatArray
    signed_distance: float

    @property
    def penetration_depth(self) -> float:
        return -self.signed_distance

    @property
    def key(self) -> tuple[int, int]:
        return (self.point_index, self.obstacle_index)


def collision_point_positions(scene: Scene, model: RobotModel, q: Sequence[float] | FloatArray) -> FloatArray:
    frames = forward_kinematics(model, q)
    if not scene.collision_points:
        return np.zeros((0, 2))
    return np.array(
        [frames[point.link_index - 1].to_world(point.local_offset) for point in scene.collision_points]
    )


def detect_contacts(
    scene: Scene,
    model: RobotModel,
    q: Sequence[float] | FloatArray,
    activation_distance: float,
) -> list[ContactCandidate]:
    """All pairs with signed distance ≤ ``activation_distance``.

    Ordered by collision point index, then obstacle index.
    """

    if not activation_distance >= 0:
        raise ValidationError("activation_distance must be >= 0")
    scene.validate_for(model)
    positions = collision_point_positions(scene, model, q)
    candidates: list[ContactCandidate] = []
    for point_index, (point, position) in enumerate(zip(scene.collision_points, positions)):
        for obstacle_index, obstacle in enumerate(scene.obstacles):
            query = obstacle.signed_distance(position)
            if query.distance <= activation_distance:
                candidates.append(
                    ContactCandidate(
                        point_index=point_index,
                        body_point=point,
                        obstacle_index=obstacle_index,
                        world_point=position,
                        normal=query.normal,
                        signed_distance=query.distance,
                    )
                )
    return candidates


def min_signed_distance(scene: Scene, model: RobotModel, q: Sequence[float] | FloatArray) -> float:
    positions = collision_point_positions(scene, model, q)
    distances = [
        obstacle.signed_distance(position).distance
        for position in positions
        for obstacle in scene.obstacles
    ]
    return min(distances) if distances else float("inf")
