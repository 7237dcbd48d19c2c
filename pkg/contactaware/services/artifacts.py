"""Run artifacts: per-run CSV logs, timing tables, SVG plots and the run manifest.

The run CSV has a fixed column order::

    tick, time, q_<i>..., q_cmd_<i>..., q_ref_<i>..., p_ref_x, p_ref_y,
    force_true_norm, force_est_norm, force_pred_norm, e_lambda, w,
    tracking_error, v_q_norm, projection_residual, force_gain,
    solver_status, solver_iterations, kkt_residual, fault,
    true_forces, estimated_forces, lambda_pred

Floats are written with 17 significant digits so a re-read reproduces them
exactly. Per-contact columns hold ``point:obstacle=value`` pairs joined by
``;``. Wall-clock runtimes live in the separate timings CSV so that run logs
stay byte-identical across repeated runs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from contactaware import __version__  # noqa: E402
from contactaware.core.exceptions import ArtifactError, ConfigurationError  # noqa: E402
from contactaware.core.types import ContactKey, SolverDiagnostics, StepLog  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "contactaware"

_SCALAR_COLUMNS = (
    "force_true_norm",
    "force_est_norm",
    "force_pred_norm",
    "e_lambda",
    "w",
    "tracking_error",
    "v_q_norm",
    "projection_residual",
    "force_gain",
)
_CONTACT_COLUMNS = ("true_forces", "estimated_forces", "lambda_pred")


def ensure_output_dir(path: str | os.PathLike[str]) -> Path:
    """Create ``path`` and prove it is writable; raises before any run starts."""

    directory = Path(path).expanduser()
    probe = directory / ".write-probe"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        probe.write_text("ok", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {directory} is not writable: {exc}") from exc
    return directory


def _number(value: float) -> str:
    return format(float(value), ".17g")


def _encode_forces(forces: Mapping[ContactKey, float]) -> str:
    return ";".join(f"{key[0]}:{key[1]}={_number(value)}" for key, value in sorted(forces.items()))


def _decode_forces(text: str) -> dict[ContactKey, float]:
    forces: dict[ContactKey, float] = {}
    if not text:
        return forces
    for item in text.split(";"):
        key, value = item.split("=")
        point, obstacle = key.split(":")
        forces[(int(point), int(obstacle))] = float(value)
    return forces


def log_header(n_joints: int) -> list[str]:
    header = ["tick", "time"]
    for prefix in ("q", "q_cmd", "q_ref"):
        header.extend(f"{prefix}_{i}" for i in range(n_joints))
    header.extend(["p_ref_x", "p_ref_y"])
    header.extend(_SCALAR_COLUMNS)
    header.extend(["solver_status", "solver_iterations", "kkt_residual", "fault"])
    header.extend(_CONTACT_COLUMNS)
    return header


def _row(log: StepLog) -> list[str]:
    row = [str(log.tick), _number(log.time)]
    for vector in (log.q, log.q_cmd, log.q_ref):
        row.extend(_number(v) for v in vector)
    row.extend([_number(v) for v in log.p_ref] if log.p_ref is not None else ["", ""])
    row.extend(_number(getattr(log, name)) for name in _SCALAR_COLUMNS)
    row.extend(
        [
            log.solver.status,
            str(log.solver.iterations),
            _number(log.solver.kkt_residual),
            log.fault or "",
        ]
    )
    row.extend(
        [_encode_forces(log.true_forces), _encode_forces(log.estimated_forces), _encode_forces(log.lambda_pred)]
    )
    return row


def write_log_csv(logs: Sequence[StepLog], path: str | os.PathLike[str]) -> Path:
    path = Path(path)
    n_joints = int(logs[0].q.size) if logs else 0
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(log_header(n_joints))
            writer.writerows(_row(log) for log in logs)
    except OSError as exc:
        raise ArtifactError(f"cannot write run log {path}: {exc}") from exc
    return path


def read_log_csv(path: str | os.PathLike[str]) -> list[StepLog]:
    """Re-ingest a run CSV; solver runtimes are not part of the log and read back as zero."""

    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            header = reader.fieldnames or []
            n_joints = sum(1 for name in header if name.startswith("q_") and name[2:].isdigit())
            logs = [_parse_row(row, n_joints) for row in reader]
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactError(f"cannot read run log {path}: {exc}") from exc
    return logs


def _parse_row(row: Mapping[str, str], n_joints: int) -> StepLog:
    def vector(prefix: str) -> np.ndarray:
        return np.array([float(row[f"{prefix}_{i}"]) for i in range(n_joints)])

    p_ref = None
    if row["p_ref_x"]:
        p_ref = np.array([float(row["p_ref_x"]), float(row["p_ref_y"])])
    return StepLog(
        tick=int(row["tick"]),
        time=float(row["time"]),
        q=vector("q"),
        q_cmd=vector("q_cmd"),
        q_ref=vector("q_ref"),
        p_ref=p_ref,
        true_forces=_decode_forces(row["true_forces"]),
        estimated_forces=_decode_forces(row["estimated_forces"]),
        lambda_pred=_decode_forces(row["lambda_pred"]),
        solver=SolverDiagnostics(
            status=row["solver_status"],  # type: ignore[arg-type]
            iterations=int(row["solver_iterations"]),
            kkt_residual=float(row["kkt_residual"]),
        ),
        fault=row["fault"] or None,
        **{name: float(row[name]) for name in _SCALAR_COLUMNS},
    )


def write_timings_csv(logs: Sequence[StepLog], path: str | os.PathLike[str]) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["tick", "solver_status", "solver_iterations", "runtime_ms"])
            for log in logs:
                writer.writerow(
                    [log.tick, log.solver.status, log.solver.iterations, f"{log.solver.runtime_s * 1e3:.6f}"]
                )
    except OSError as exc:
        raise ArtifactError(f"cannot write timings {path}: {exc}") from exc
    return path


def config_hash(config: Mapping[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(path: str | os.PathLike[str], entries: Mapping[str, Any], files: Iterable[Path] = ()) -> Path:
    path = Path(path)
    lines = [f"version: {__version__}"]
    lines.extend(f"{key}: {value}" for key, value in entries.items())
    for file in sorted(Path(f).name for f in files):
        lines.append(f"file: {file}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot write manifest {path}: {exc}") from exc
    return path


def _save(figure: plt.Figure, path: Path) -> Path:
    try:
        figure.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise ArtifactError(f"cannot write plot {path}: {exc}") from exc
    finally:
        plt.close(figure)
    return path


def _threshold_lines(axis: plt.Axes, f_threshold: Optional[float], lambda_max: Optional[float]) -> None:
    if f_threshold is not None:
        axis.axhline(f_threshold, color="tab:gray", linestyle="--", linewidth=0.8, label="f_threshold")
    if lambda_max is not None:
        axis.axhline(lambda_max, color="tab:red", linestyle="--", linewidth=0.8, label="lambda_max")


def plot_run(
    logs: Sequence[StepLog],
    output_dir: Path,
    stem: str,
    *,
    f_threshold: Optional[float] = None,
    lambda_max: Optional[float] = None,
) -> list[Path]:
    """One SVG per metric group: forces, joint speed, tracking error, damping."""

    time = [log.time for log in logs]
    written: list[Path] = []

    figure, axis = plt.subplots(figsize=(8, 3.5))
    axis.plot(time, [log.force_true_norm for log in logs], label="true")
    axis.plot(time, [log.force_est_norm for log in logs], label="estimated", alpha=0.8)
    axis.plot(time, [log.force_pred_norm for log in logs], label="predicted", alpha=0.8)
    _threshold_lines(axis, f_threshold, lambda_max)
    axis.set_xlabel("time [s]")
    axis.set_ylabel("contact force norm [N]")
    axis.legend(loc="upper right")
    written.append(_save(figure, output_dir / f"{stem}_force.svg"))

    for suffix, attribute, label in (
        ("velocity", "v_q_norm", "joint velocity norm [rad/s]"),
        ("tracking", "tracking_error", "tracking error"),
    ):
        figure, axis = plt.subplots(figsize=(8, 3.5))
        axis.plot(time, [getattr(log, attribute) for log in logs])
        axis.set_xlabel("time [s]")
        axis.set_ylabel(label)
        written.append(_save(figure, output_dir / f"{stem}_{suffix}.svg"))

    figure, axis = plt.subplots(figsize=(8, 3.5))
    axis.plot(time, [log.e_lambda for log in logs], label="e_lambda")
    twin = axis.twinx()
    twin.plot(time, [log.w for log in logs], color="tab:orange", label="w")
    axis.set_xlabel("time [s]")
    axis.set_ylabel("force discrepancy")
    twin.set_ylabel("damping weight")
    written.append(_save(figure, output_dir / f"{stem}_damping.svg"))
    return written


def plot_envelopes(
    envelopes: Mapping[str, Mapping[str, np.ndarray]],
    path: Path,
    *,
    f_threshold: Optional[float] = None,
    lambda_max: Optional[float] = None,
) -> Path:
    """Mean line and min/max band of force norm and ‖v_q‖ for every controller."""

    figure, (force_axis, speed_axis) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for name, envelope in envelopes.items():
        time = envelope["time"]
        for axis, prefix in ((force_axis, "force"), (speed_axis, "speed")):
            line = axis.plot(time, envelope[f"{prefix}_mean"], label=name)[0]
            axis.fill_between(
                time,
                envelope[f"{prefix}_min"],
                envelope[f"{prefix}_max"],
                color=line.get_color(),
                alpha=0.2,
                linewidth=0,
            )
    _threshold_lines(force_axis, f_threshold, lambda_max)
    force_axis.set_ylabel("contact force norm [N]")
    force_axis.legend(loc="upper right")
    speed_axis.set_ylabel("joint velocity norm [rad/s]")
    speed_axis.set_xlabel("time [s]")
    return _save(figure, path)


def write_comparison_csv(rows: Sequence[Mapping[str, Any]], path: Path) -> Path:
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["controller", "metric", "min", "mean", "max", "runs"])
            for row in rows:
                writer.writerow(
                    [
                        row["controller"],
                        row["metric"],
                        _number(row["min"]),
                        _number(row["mean"]),
                        _number(row["max"]),
                        row["runs"],
                    ]
                )
    except OSError as exc:
        raise ArtifactError(f"cannot write comparison {path}: {exc}") from exc
    return path
