"""Closed-loop scenario runner and controller comparison."""
from __future__ import annotations

import asyncio
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from contactaware.core.config import settings
from contactaware.core.exceptions import SimulationError, ValidationError
from contactaware.core.types import FloatArray, StepLog
from contactaware.services import artifacts
from contactaware.services.contact_sensing import ContactSensor, force_discrepancy, update_damping_weight
from contactaware.services.controllers import Controller, ControllerInput
from contactaware.services.kinematics import body_point_position
from contactaware.services.metrics import METRIC_NAMES, RunMetrics, compute_metrics
from contactaware.services.qp_solver import QpSolver
from contactaware.services.quasistatic import simulate_step
from contactaware.services.trajectory import TaskTrajectory, reference_at

if TYPE_CHECKING:
    from contactaware.schemas import ScenarioSpec

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    scenario: str
    controller: str
    seed: int
    logs: list[StepLog] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None

    @property
    def stem(self) -> str:
        return f"{self.scenario}_{self.controller}_seed{self.seed}"


def _norm(values: Sequence[float] | FloatArray) -> float:
    array = np.asarray(values, dtype=float)
    return float(np.linalg.norm(array)) if array.size else 0.0


def run_scenario(
    scenario: "ScenarioSpec",
    *,
    controller: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunResult:
    """Run the fixed-rate loop: reference, sensing, controller, simulator, log.

    The controller only ever sees the sensor's estimate. Faults (solver or
    simulator) hold the last command; the run aborts once faults persist for
    more than ``fault_abort_ticks`` consecutive ticks.
    """

    name = controller or scenario.controller.name
    seed = scenario.rng_seed if seed is None else int(seed)
    model = scenario.robot.build()
    scene = scenario.scene.build(model)
    trajectory = scenario.reference.build()
    config = scenario.controller.build(model, scenario.reference)
    sensing = scenario.sensing.build(seed)
    simulator = scenario.simulation.build()
    abort_after = scenario.fault_abort_ticks or settings.fault_abort_ticks
    dt = 1.0 / scenario.control_rate
    task_point = config.objective.body_point if isinstance(trajectory, TaskTrajectory) else None

    law = Controller(name, config, QpSolver())
    sensor = ContactSensor(model, sensing)
    sim_solver = QpSolver()
    damping = scenario.controller.damping.build()

    q_cmd = model.check_configuration(trajectory.initial, "initial configuration")
    q, truth = simulate_step(scene, model, q_cmd, q_cmd, config=simulator, solver=sim_solver)
    lambda_prev: dict = {}
    result = RunResult(scenario=scenario.name, controller=name, seed=seed)
    consecutive_faults = 0

    logger.info(
        "Run started",
        extra={"scenario": scenario.name, "controller": name, "seed": seed, "ticks": scenario.ticks},
    )
    for tick in range(scenario.ticks):
        time_next = (tick + 1) * dt
        q_ref, p_ref = reference_at(trajectory, time_next, q_cmd)

        estimated = sensor.observe(tick, truth, q)
        lambda_est = estimated.force_map()
        e_lambda = force_discrepancy(lambda_prev, lambda_est, damping.a)
        damping = update_damping_weight(damping, e_lambda)

        output = law.step(
            ControllerInput(
                model=model,
                tick=tick,
                q=q,
                q_cmd=q_cmd,
                q_ref=q_ref,
                contacts=estimated,
                damping=damping,
                lambda_pred=lambda_prev,
                p_ref=p_ref,
            )
        )
        fault = output.fault
        command = output.q_cmd
        try:
            q_next, truth_next = simulate_step(scene, model, q, command, config=simulator, solver=sim_solver)
        except SimulationError as exc:
            fault = f"simulator: {exc}"
            logger.warning("Simulator fault, holding command", extra={"tick": tick, "error": str(exc)})
            sim_solver.reset()
            command, q_next, truth_next = q_cmd, q, truth

        if task_point is not None and p_ref is not None:
            tracking = _norm(body_point_position(model, q_next, task_point) - p_ref)
        else:
            tracking = float(np.max(np.abs(q_next - q_ref)))
        lambda_map = output.lambda_map()
        result.logs.append(
            StepLog(
                tick=tick,
                time=time_next,
                q=q_next,
                q_cmd=command,
                q_ref=q_ref,
                p_ref=p_ref,
                true_forces=truth_next.force_map(),
                estimated_forces=lambda_est,
                lambda_pred=lambda_map,
                force_true_norm=_norm(truth_next.magnitudes),
                force_est_norm=_norm(list(lambda_est.values())),
                force_pred_norm=_norm(output.lambda_pred),
                e_lambda=e_lambda,
                w=damping.w,
                tracking_error=tracking,
                v_q_norm=_norm(q_next - q) / dt,
                projection_residual=output.projection_residual,
                force_gain=output.force_gain,
                solver=output.diagnostics,
                fault=fault,
            )
        )

        q, q_cmd, truth, lambda_prev = q_next, command, truth_next, lambda_map
        consecutive_faults = consecutive_faults + 1 if fault else 0
        if consecutive_faults > abort_after:
            result.aborted = True
            result.abort_reason = fault
            logger.error(
                "Run aborted after persistent faults",
                extra={"scenario": scenario.name, "controller": name, "tick": tick, "fault": fault},
            )
            break

    logger.info(
        "Run finished",
        extra={"scenario": scenario.name, "controller": name, "ticks": len(result.logs), "aborted": result.aborted},
    )
    return result


def run_metrics(scenario: "ScenarioSpec", logs: Sequence[StepLog]) -> RunMetrics:
    return compute_metrics(
        logs,
        settle_time=scenario.metrics.settle_time,
        contact_window=scenario.metrics.contact_window,
        separation_window=scenario.metrics.separation_window,
    )


def emit_artifacts(
    scenario: "ScenarioSpec",
    result: RunResult,
    output_dir: str | os.PathLike[str],
    *,
    plots: bool = True,
) -> list[Path]:
    """Write the run CSV, its timings, per-metric SVGs and a manifest."""

    directory = artifacts.ensure_output_dir(output_dir)
    files = [
        artifacts.write_log_csv(result.logs, directory / f"{result.stem}.csv"),
        artifacts.write_timings_csv(result.logs, directory / f"timings_{result.stem}.csv"),
    ]
    if plots:
        files.extend(
            artifacts.plot_run(
                result.logs,
                directory,
                result.stem,
                f_threshold=scenario.sensing.f_threshold,
                lambda_max=scenario.controller.lambda_max,
            )
        )
    manifest = artifacts.write_manifest(
        directory / f"manifest_{result.stem}.txt",
        {
            "scenario": scenario.name,
            "controller": result.controller,
            "seed": result.seed,
            "config_sha256": scenario.config_hash(),
            "ticks": len(result.logs),
            "aborted": result.aborted,
        },
        files,
    )
    logger.info("Artifacts written", extra={"directory": str(directory), "files": len(files) + 1})
    return files + [manifest]


@dataclass
class ComparisonReport:
    scenario: str
    runs: list[RunResult]
    metrics: dict[tuple[str, int], RunMetrics]
    summary: list[dict]
    envelopes: dict[str, dict[str, np.ndarray]]

    @property
    def aborted(self) -> bool:
        return any(run.aborted for run in self.runs)

    def metric(self, controller: str, name: str, statistic: str = "mean") -> float:
        for row in self.summary:
            if row["controller"] == controller and row["metric"] == name:
                return float(row[statistic])
        raise KeyError((controller, name))


def _summarize(controllers: Sequence[str], metrics: dict[tuple[str, int], RunMetrics]) -> list[dict]:
    rows: list[dict] = []
    for controller in controllers:
        per_seed = [values.as_dict() for (name, _), values in metrics.items() if name == controller]
        for metric in METRIC_NAMES:
            samples = np.array([values[metric] for values in per_seed])
            rows.append(
                {
                    "controller": controller,
                    "metric": metric,
                    "min": float(samples.min()),
                    "mean": float(samples.mean()),
                    "max": float(samples.max()),
                    "runs": len(samples),
                }
            )
    return rows


def _envelopes(controllers: Sequence[str], runs: Sequence[RunResult]) -> dict[str, dict[str, np.ndarray]]:
    envelopes: dict[str, dict[str, np.ndarray]] = {}
    for controller in controllers:
        selected = [run.logs for run in runs if run.controller == controller and run.logs]
        if not selected:
            continue
        length = min(len(logs) for logs in selected)
        force = np.array([[log.force_true_norm for log in logs[:length]] for logs in selected])
        speed = np.array([[log.v_q_norm for log in logs[:length]] for logs in selected])
        envelopes[controller] = {
            "time": np.array([log.time for log in selected[0][:length]]),
            "force_min": force.min(axis=0),
            "force_mean": force.mean(axis=0),
            "force_max": force.max(axis=0),
            "speed_min": speed.min(axis=0),
            "speed_mean": speed.mean(axis=0),
            "speed_max": speed.max(axis=0),
        }
    return envelopes


async def _run_concurrently(
    scenario: "ScenarioSpec",
    jobs: Sequence[tuple[str, int]],
    workers: int,
) -> list[RunResult]:
    gate = asyncio.Semaphore(workers)

    async def run_one(controller: str, seed: int) -> RunResult:
        async with gate:
            return await asyncio.to_thread(run_scenario, scenario, controller=controller, seed=seed)

    return list(await asyncio.gather(*(run_one(controller, seed) for controller, seed in jobs)))


def compare_controllers(
    scenario: "ScenarioSpec",
    controllers: Sequence[str],
    *,
    repeats: int = 1,
    seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
) -> ComparisonReport:
    """Run every (controller, seed) pair and aggregate min/mean/max over seeds.

    Runs share nothing mutable, so they execute concurrently in worker threads;
    results are ordered by the job list, not by completion.
    """

    controllers = list(dict.fromkeys(controllers))
    if len(controllers) < 2:
        raise ValidationError("compare needs at least two distinct controllers")
    if seeds is None:
        if repeats < 1:
            raise ValidationError("repeats must be >= 1")
        seeds = [scenario.rng_seed + k for k in range(repeats)]
    jobs = [(controller, int(seed)) for controller in controllers for seed in seeds]
    runs = asyncio.run(_run_concurrently(scenario, jobs, workers or settings.compare_workers))
    metrics = {(run.controller, run.seed): run_metrics(scenario, run.logs) for run in runs}
    return ComparisonReport(
        scenario=scenario.name,
        runs=runs,
        metrics=metrics,
        summary=_summarize(controllers, metrics),
        envelopes=_envelopes(controllers, runs),
    )


def emit_comparison(
    scenario: "ScenarioSpec",
    report: ComparisonReport,
    output_dir: str | os.PathLike[str],
    *,
    run_plots: bool = False,
) -> list[Path]:
    directory = artifacts.ensure_output_dir(output_dir)
    files: list[Path] = []
    for run in report.runs:
        files.append(artifacts.write_log_csv(run.logs, directory / f"{run.stem}.csv"))
        files.append(artifacts.write_timings_csv(run.logs, directory / f"timings_{run.stem}.csv"))
        if run_plots:
            files.extend(
                artifacts.plot_run(
                    run.logs,
                    directory,
                    run.stem,
                    f_threshold=scenario.sensing.f_threshold,
                    lambda_max=scenario.controller.lambda_max,
                )
            )
    files.append(artifacts.write_comparison_csv(report.summary, directory / "comparison.csv"))
    files.append(
        artifacts.plot_envelopes(
            report.envelopes,
            directory / "comparison.svg",
            f_threshold=scenario.sensing.f_threshold,
            lambda_max=scenario.controller.lambda_max,
        )
    )
    manifest = artifacts.write_manifest(
        directory / "manifest.txt",
        {
            "scenario": scenario.name,
            "controllers": ",".join(dict.fromkeys(run.controller for run in report.runs)),
            "seeds": ",".join(str(s) for s in dict.fromkeys(run.seed for run in report.runs)),
            "config_sha256": scenario.config_hash(),
            "aborted": report.aborted,
        },
        files,
    )
    return files + [manifest]
