"""Synthetic contact estimation and the force-discrepancy damping signal.

Estimates are derived from the simulator's ground truth: magnitudes, directions
and link-frame points are perturbed with seeded Gaussian noise, contacts below
the sensing threshold are discarded and the contact Jacobian is rebuilt at the
configuration the controller sees.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Literal, Mapping, Optional, Sequence, Union

import numpy as np

from contactaware.core.exceptions import ValidationError
from contactaware.core.types import ContactKey, FloatArray
from contactaware.services.kinematics import BodyPoint, RobotModel, body_point_position, forward_kinematics
from contactaware.services.quasistatic import Contact, ContactSet, build_contact_jacobian

logger = logging.getLogger(__name__)

DampingFilter = Literal["fir", "iir"]
ForceVector = Union[Mapping[ContactKey, float], Sequence[float], FloatArray]


@dataclass(frozen=True)
class SensingConfig:
    f_threshold: float = 5.0
    direction_noise_std: float = 0.0
    magnitude_noise_std: float = 0.0
    point_noise_std: float = 0.0
    rng_seed: int = 0
    latency_ticks: int = 0

    def __post_init__(self) -> None:
        if self.f_threshold < 0:
            raise ValidationError("f_threshold must be >= 0")
        for name in ("direction_noise_std", "magnitude_noise_std", "point_noise_std"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.rng_seed < 0:
            raise ValidationError("rng_seed must be >= 0")
        if self.latency_ticks < 0:
            raise ValidationError("latency_ticks must be >= 0")

    @property
    def noiseless(self) -> bool:
        return self.direction_noise_std == 0 and self.magnitude_noise_std == 0 and self.point_noise_std == 0


def _contact_rng(cfg: SensingConfig, tick: int, key: ContactKey) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, tick, key[0], key[1]])


def _perturb(contact: Contact, cfg: SensingConfig, tick: int) -> tuple[float, FloatArray, BodyPoint]:
    """Draw magnitude, direction and point noise for one contact, always in that order."""

    rng = _contact_rng(cfg, tick, contact.key)
    magnitude_noise = rng.normal(0.0, cfg.magnitude_noise_std) if cfg.magnitude_noise_std else 0.0
    angle = rng.normal(0.0, cfg.direction_noise_std) if cfg.direction_noise_std else 0.0
    offset_noise = rng.normal(0.0, cfg.point_noise_std, size=2) if cfg.point_noise_std else None

    magnitude = max(0.0, contact.magnitude + magnitude_noise)
    direction = contact.direction
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        direction = np.array([[c, -s], [s, c]]) @ direction
        direction = direction / np.linalg.norm(direction)
    point = contact.body_point
    if offset_noise is not None:
        offset = np.asarray(point.local_offset) + offset_noise
        point = BodyPoint(point.link_index, (float(offset[0]), float(offset[1])))
    return magnitude, direction, point


def estimate_contacts(
    true_contacts: ContactSet,
    cfg: SensingConfig,
    tick: int,
    *,
    model: Optional[RobotModel] = None,
    q: Optional[Sequence[float] | FloatArray] = None,
) -> ContactSet:
    """Noisy, thresholded copy of the true contact set at ``tick``.

    With ``model`` and ``q`` the Jacobian rows are rebuilt at ``q``; without
    them the estimate keeps the true rows, which is only valid for noiseless
    sensing of direction and point.
    """

    if tick < 0:
        raise ValidationError("tick must be >= 0")
    perturbed: list[Contact] = []
    for contact in true_contacts.contacts:
        magnitude, direction, point = _perturb(contact, cfg, tick)
        if magnitude < cfg.f_threshold:
            continue
        world_point = contact.world_point
        if point is not contact.body_point and model is not None and q is not None:
            world_point = body_point_position(model, q, point)
        perturbed.append(
            Contact(
                key=contact.key,
                body_point=point,
                world_point=world_point,
                direction=direction,
                magnitude=magnitude,
            )
        )

    if model is not None and q is not None:
        return build_contact_jacobian(model, q, perturbed)
    if cfg.direction_noise_std or cfg.point_noise_std:
        raise ValidationError("direction or point noise needs model and q to rebuild the Jacobian")
    rows = [i for i, contact in enumerate(true_contacts.contacts) if contact.key in {c.key for c in perturbed}]
    jacobian = true_contacts.jacobian[rows] if rows else np.zeros((0, true_contacts.jacobian.shape[1]))
    return ContactSet(contacts=tuple(perturbed), jacobian=jacobian)


class ContactSensor:
    """Stateful sensor for one run: applies ``estimate_contacts`` and the configured latency."""

    def __init__(self, model: RobotModel, cfg: SensingConfig) -> None:
        self.model = model
        self.cfg = cfg
        self._history: deque[tuple[Contact, ...]] = deque(maxlen=cfg.latency_ticks + 1)

    def reset(self) -> None:
        self._history.clear()

    def observe(self, tick: int, true_contacts: ContactSet, q: Sequence[float] | FloatArray) -> ContactSet:
        """Estimate at ``tick``; returns what was sensed ``latency_ticks`` ago, re-linearized at ``q``.

        Until the buffer fills the sensor reports no contacts.
        """

        estimate = estimate_contacts(true_contacts, self.cfg, tick, model=self.model, q=q)
        self._history.append(estimate.contacts)
        if len(self._history) <= self.cfg.latency_ticks:
            return ContactSet.empty(self.model.n_joints)
        delayed = self._history[0]
        if self.cfg.latency_ticks == 0:
            return estimate
        frames = forward_kinematics(self.model, q)
        moved = [
            replace(contact, world_point=body_point_position(self.model, q, contact.body_point, frames))
            for contact in delayed
        ]
        return build_contact_jacobian(self.model, q, moved)


def _aligned_error(lambda_pred: ForceVector, lambda_est: ForceVector) -> float:
    if isinstance(lambda_pred, Mapping) or isinstance(lambda_est, Mapping):
        if not (isinstance(lambda_pred, Mapping) and isinstance(lambda_est, Mapping)):
            raise ValidationError("force vectors must both be keyed by contact or both be arrays")
        keys = set(lambda_pred) | set(lambda_est)
        return max(
            (abs(float(lambda_pred.get(key, 0.0)) - float(lambda_est.get(key, 0.0))) for key in keys),
            default=0.0,
        )
    pred = np.asarray(lambda_pred, dtype=float).reshape(-1)
    est = np.asarray(lambda_est, dtype=float).reshape(-1)
    if pred.shape != est.shape:
        raise ValidationError(f"force vectors differ in length: {pred.size} vs {est.size}")
    return float(np.max(np.abs(pred - est), initial=0.0))


def force_discrepancy(lambda_pred: ForceVector, lambda_est: ForceVector, a: float) -> float:
    """e_λ = 1 − exp(−‖λ_pred − λ_est‖_∞ / a), in [0, 1].

    Keyed inputs are aligned by contact identity; a contact present on one side
    only counts with its full magnitude.
    """

    if not a > 0:
        raise ValidationError("a must be positive")
    error = _aligned_error(lambda_pred, lambda_est)
    if not np.isfinite(error):
        return 1.0
    return float(-np.expm1(-error / a))


@dataclass(frozen=True)
class DampingState:
    """Damping weight state threaded through the control loop.

    With the ``fir`` filter ``e_prev`` is the previous raw discrepancy; with
    ``iir`` it holds the previous filtered value.
    """

    e_prev: float = 0.0
    w: float = 0.0
    a: float = 5.0
    alpha: float = 0.9
    w_max: float = 10.0
    filter: DampingFilter = "fir"

    def __post_init__(self) -> None:
        if not 0.0 <= self.e_prev <= 1.0:
            raise ValidationError(f"e_prev must lie in [0, 1], got {self.e_prev}")
        if not self.a > 0:
            raise ValidationError("a must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must lie in (0, 1]")
        if not self.w_max >= 0:
            raise ValidationError("w_max must be >= 0")
        if not 0.0 <= self.w <= self.w_max:
            raise ValidationError(f"w must lie in [0, {self.w_max}], got {self.w}")
        if self.filter not in ("fir", "iir"):
            raise ValidationError(f"unknown damping filter {self.filter!r}")


def update_damping_weight(state: DampingState, e_now: float) -> DampingState:
    """w = w_max(α·e_now + (1 − α)·e_prev)."""

    if not 0.0 <= e_now <= 1.0:
        raise ValidationError(f"e_now must lie in [0, 1], got {e_now}")
    filtered = state.alpha * e_now + (1.0 - state.alpha) * state.e_prev
    w = min(max(state.w_max * filtered, 0.0), state.w_max)
    e_prev = e_now if state.filter == "fir" else min(max(filtered, 0.0), 1.0)
    return replace(state, e_prev=e_prev, w=w)
