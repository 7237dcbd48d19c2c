"""Command-line entry point: run, compare, validate and list scenario presets."""
from __future__ import annotations

import logging
import shutil
from pathlib import Path
from typing import Optional

import typer

from contactaware.core.config import settings
from contactaware.core.exceptions import ContactAwareError, ScenarioError
from contactaware.core.logging_config import configure_logging
from contactaware.schemas import ScenarioSpec, load_scenario
from contactaware.services import artifacts, harness
from contactaware.services.controllers import available_controllers

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent / "scenarios"

app = typer.Typer(add_completion=False, no_args_is_help=True, help=__doc__)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Override CONTACTAWARE_LOG_LEVEL."),
    log_file: bool = typer.Option(True, "--log-file/--no-log-file", help="Also write the rotating log file."),
) -> None:
    configure_logging(log_level, to_file=log_file)


def _resolve(scenario: str) -> Path:
    """Accept a path or the name of a shipped preset (with or without ``.json``)."""

    path = Path(scenario)
    if path.exists():
        return path
    stem = scenario.removesuffix(".json").replace("-", "_")
    preset = PRESET_DIR / f"{stem}.json"
    if preset.exists():
        return preset
    raise ScenarioError(f"no scenario file or preset named {scenario!r}")


def _load(scenario: str) -> ScenarioSpec:
    try:
        return load_scenario(_resolve(scenario))
    except ScenarioError as exc:
        typer.secho(str(exc), fg=typer.colors.RED, err=True)
        raise typer.Exit(code=2) from exc


def _output_dir(out: Optional[Path]) -> Path:
    try:
        return artifacts.ensure_output_dir(out or settings.output_dir)
    except ContactAwareError as exc:
        typer.secho(str(exc), fg=typer.colors.RED, err=True)
        raise typer.Exit(code=2) from exc


def _check_controller(name: str) -> str:
    if name not in available_controllers():
        raise typer.BadParameter(f"unknown controller {name!r}; choose from {', '.join(available_controllers())}")
    return name


@app.command()
def run(
    scenario: str = typer.Argument(..., help="Scenario JSON path or preset name."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Artifact directory."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the scenario rng_seed."),
    controller: Optional[str] = typer.Option(None, "--controller", "-c", help="Override the scenario controller."),
    plots: bool = typer.Option(True, "--plots/--no-plots"),
) -> None:
    """Run one closed-loop scenario and write its artifacts."""

    spec = _load(scenario)
    if controller is not None:
        _check_controller(controller)
    directory = _output_dir(out)
    result = harness.run_scenario(spec, controller=controller, seed=seed)
    files = harness.emit_artifacts(spec, result, directory, plots=plots)
    summary = harness.run_metrics(spec, result.logs)
    typer.echo(
        f"{result.stem}: ticks={summary.ticks} peak_force={summary.peak_force:.3f} "
        f"steady_peak_force={summary.steady_peak_force:.3f} faults={summary.fault_count}"
    )
    typer.echo(f"wrote {len(files)} files to {directory}")
    if result.aborted:
        typer.secho(f"run aborted: {result.abort_reason}", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1)


@app.command()
def compare(
    scenario: str = typer.Argument(..., help="Scenario JSON path or preset name."),
    controllers: str = typer.Option(..., "--controllers", help="Comma-separated controller names."),
    repeats: int = typer.Option(1, "--repeats", min=1, help="Seeds per controller, starting at rng_seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o"),
    workers: Optional[int] = typer.Option(None, "--workers", min=1),
    plots: bool = typer.Option(False, "--run-plots/--no-run-plots", help="Also plot every individual run."),
) -> None:
    """Run several controllers over the same seeds and write the comparison."""

    names = [_check_controller(name.strip()) for name in controllers.split(",") if name.strip()]
    if len(set(names)) < 2:
        raise typer.BadParameter("need at least two distinct controllers", param_hint="--controllers")
    spec = _load(scenario)
    directory = _output_dir(out)
    report = harness.compare_controllers(spec, names, repeats=repeats, workers=workers)
    harness.emit_comparison(spec, report, directory, run_plots=plots)
    for name in dict.fromkeys(names):
        typer.echo(
            f"{name}: steady_peak_force={report.metric(name, 'steady_peak_force'):.3f} "
            f"peak_separation_velocity={report.metric(name, 'peak_separation_velocity'):.3f} "
            f"mean_w={report.metric(name, 'mean_w'):.3f}"
        )
    typer.echo(f"wrote comparison to {directory}")
    if report.aborted:
        typer.secho("at least one run aborted", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1)


@app.command()
def validate(scenarios: list[str] = typer.Argument(..., help="Scenario files or preset names.")) -> None:
    """Parse and validate scenario files without running them."""

    failed = False
    for scenario in scenarios:
        try:
            spec = load_scenario(_resolve(scenario))
        except ScenarioError as exc:
            failed = True
            typer.secho(f"invalid: {exc}", fg=typer.colors.RED, err=True)
            continue
        typer.echo(f"ok: {spec.name} ({spec.ticks} ticks, sha256 {spec.config_hash()[:12]})")
    if failed:
        raise typer.Exit(code=2)


@app.command()
def presets(
    copy_to: Optional[Path] = typer.Option(None, "--copy-to", help="Copy every preset into this directory."),
) -> None:
    """List the shipped scenario presets, or copy them out for editing."""

    files = sorted(PRESET_DIR.glob("*.json"))
    if copy_to is not None:
        directory = _output_dir(copy_to)
        for file in files:
            shutil.copy2(file, directory / file.name)
        typer.echo(f"copied {len(files)} presets to {directory}")
        return
    for file in files:
        spec = load_scenario(file)
        typer.echo(f"{spec.name}\t{file.name}\t{spec.description}")


if __name__ == "__main__":
    app()
