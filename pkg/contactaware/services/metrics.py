"""Summary metrics of a closed-loop run, computable from logged rows alone."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from contactaware.core.types import StepLog


@dataclass(frozen=True)
class RunMetrics:
    peak_force: float
    mean_force: float
    steady_peak_force: float
    tracking_rmse: float
    final_tracking_error: float
    peak_separation_velocity: float
    contact_toggles: int
    toggles_per_second: float
    mean_w: float
    max_w: float
    mean_e_lambda: float
    max_e_lambda: float
    fault_count: int
    ticks: int

    def as_dict(self) -> dict[str, float]:
        return {name: float(value) for name, value in asdict(self).items()}


METRIC_NAMES: tuple[str, ...] = tuple(RunMetrics.__dataclass_fields__)


def contact_episodes(logs: Sequence[StepLog]) -> list[tuple[int, int]]:
    """[start, stop) tick-index ranges during which the true contact force is non-zero."""

    episodes: list[tuple[int, int]] = []
    start: Optional[int] = None
    for index, log in enumerate(logs):
        if log.in_contact and start is None:
            start = index
        elif not log.in_contact and start is not None:
            episodes.append((start, index))
            start = None
    if start is not None:
        episodes.append((start, len(logs)))
    return episodes


def release_times(logs: Sequence[StepLog]) -> list[float]:
    return [logs[stop].time for _, stop in contact_episodes(logs) if stop < len(logs)]


def _within(time: float, window: Optional[tuple[float, float]]) -> bool:
    return window is None or window[0] <= time <= window[1]


def steady_peak_force(
    logs: Sequence[StepLog],
    settle_time: float = 0.25,
    window: Optional[tuple[float, float]] = None,
) -> float:
    """Peak true force over in-contact ticks at least ``settle_time`` into their episode."""

    peak = 0.0
    for start, stop in contact_episodes(logs):
        onset = logs[start].time
        for log in logs[start:stop]:
            if log.time - onset >= settle_time and _within(log.time, window):
                peak = max(peak, log.force_true_norm)
    return peak


def peak_separation_velocity(
    logs: Sequence[StepLog],
    window: Optional[tuple[float, float]] = None,
    margin: tuple[float, float] = (0.1, 0.5),
) -> float:
    """Peak ‖v_q‖ inside ``window``, or around each contact release when no window is given."""

    if window is not None:
        speeds = [log.v_q_norm for log in logs if _within(log.time, window)]
        return max(speeds, default=0.0)
    peak = 0.0
    for release in release_times(logs):
        around = (release - margin[0], release + margin[1])
        peak = max(peak, max((log.v_q_norm for log in logs if _within(log.time, around)), default=0.0))
    return peak


def contact_toggles(logs: Sequence[StepLog]) -> int:
    flags = [log.in_contact for log in logs]
    return int(sum(1 for before, after in zip(flags, flags[1:]) if before != after))


def compute_metrics(
    logs: Sequence[StepLog],
    *,
    settle_time: float = 0.25,
    contact_window: Optional[tuple[float, float]] = None,
    separation_window: Optional[tuple[float, float]] = None,
) -> RunMetrics:
    if not logs:
        return RunMetrics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0)
    in_contact = [log.force_true_norm for log in logs if log.in_contact and _within(log.time, contact_window)]
    tracking = np.array([log.tracking_error for log in logs])
    weights = np.array([log.w for log in logs])
    errors = np.array([log.e_lambda for log in logs])
    toggles = contact_toggles(logs)
    span = logs[-1].time - logs[0].time + (logs[1].time - logs[0].time if len(logs) > 1 else 0.0)
    return RunMetrics(
        peak_force=max((log.force_true_norm for log in logs), default=0.0),
        mean_force=float(np.mean(in_contact)) if in_contact else 0.0,
        steady_peak_force=steady_peak_force(logs, settle_time, contact_window),
        tracking_rmse=float(np.sqrt(np.mean(tracking**2))),
        final_tracking_error=float(tracking[-1]),
        peak_separation_velocity=peak_separation_velocity(logs, separation_window),
        contact_toggles=toggles,
        toggles_per_second=toggles / span if span > 0 else 0.0,
        mean_w=float(np.mean(weights)),
        max_w=float(np.max(weights)),
        mean_e_lambda=float(np.mean(errors)),
        max_e_lambda=float(np.max(errors)),
        fault_count=sum(1 for log in logs if log.fault),
        ticks=len(logs),
    )
