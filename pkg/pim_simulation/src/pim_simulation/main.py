"""Main entry point for pim-simulation."""

import logging
from pathlib import Path
from sys import stderr
from typing import Callable, List, Optional, TypeVar

import typer

from pim_simulation.coherence.system import MechanismKind
from pim_simulation.parameters import (
    ConfigError,
    ExperimentConfig,
    ExportFormat,
    JSONParameters,
    load_config,
    paper_scale,
)
from pim_simulation.pim_utils import InvariantViolation
from pim_simulation.results import export
from pim_simulation.simulator import compare_mechanisms, run_experiment, run_simulations

app = typer.Typer()

T = TypeVar("T")

CONFIG_EXIT = 1
INVARIANT_EXIT = 2
IO_EXIT = 3


def main() -> None:
    """Entry point for pim_simulation."""
    logging.basicConfig(stream=stderr, level=logging.WARNING)
    app()


def _guarded(action: Callable[[], T]) -> T:
    """Run an action, turning harness errors into exit codes."""
    try:
        return action()
    except ConfigError as error:
        typer.echo(str(error), err=True)
        raise typer.Exit(CONFIG_EXIT) from error
    except InvariantViolation as error:
        typer.echo(f"{error}\nRe-run with --trace to keep the event traces.", err=True)
        raise typer.Exit(INVARIANT_EXIT) from error
    except OSError as error:
        typer.echo(f"Error: {error.strerror} ({error.filename})", err=True)
        raise typer.Exit(IO_EXIT) from error


def _prepare(
    config_path: Optional[Path], seed: Optional[int], use_paper_scale: bool, verbose: bool
) -> ExperimentConfig:
    if verbose:
        logging.getLogger().setLevel(logging.INFO)
    config = load_config(config_path)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    if use_paper_scale:
        config = paper_scale(config)
    return config


def _trace_folder(out: Path, trace: bool) -> Optional[Path]:
    if not trace:
        return None
    folder = out.parent
    folder.mkdir(parents=True, exist_ok=True)
    return folder


def _base_folder(config_path: Optional[Path]) -> Path:
    return config_path.parent if config_path is not None else Path(".")


@app.command()
def run(  # pylint: disable=too-many-arguments
    config_path: Optional[Path] = typer.Option(None, "--config", help="Path to parameters file."),
    seed: Optional[int] = typer.Option(None, help="Seed overriding the parameters file."),
    out: Path = typer.Option(Path("results.csv"), help="Result file."),
    export_format: ExportFormat = typer.Option(ExportFormat.CSV, "--format", help="Result format."),
    use_paper_scale: bool = typer.Option(
        False, "--paper-scale", help="Use the published workload sizes."
    ),
    trace: bool = typer.Option(False, help="Write JSON-lines traces next to the result file."),
    verbose: bool = typer.Option(False, help="Log progress."),
) -> None:
    """Run one experiment for every repeat of its seed."""

    def action() -> None:
        config = _prepare(config_path, seed, use_paper_scale, verbose)
        trace_folder = _trace_folder(out, trace)
        reports = [
            run_experiment(config, run_seed, _base_folder(config_path), trace_folder)
            for run_seed in config.seeds
        ]
        export(reports, out, export_format)

    _guarded(action)


@app.command()
def compare(  # pylint: disable=too-many-arguments
    config_path: Optional[Path] = typer.Option(None, "--config", help="Path to parameters file."),
    seed: Optional[int] = typer.Option(None, help="Seed overriding the parameters file."),
    out: Path = typer.Option(Path("comparison.csv"), help="Result file."),
    export_format: ExportFormat = typer.Option(ExportFormat.CSV, "--format", help="Result format."),
    use_paper_scale: bool = typer.Option(
        False, "--paper-scale", help="Use the published workload sizes."
    ),
    trace: bool = typer.Option(False, help="Write JSON-lines traces next to the result file."),
    verbose: bool = typer.Option(False, help="Log progress."),
    mechanism: Optional[List[MechanismKind]] = typer.Option(
        None, help="Mechanism to compare (repeatable, default all)."
    ),
) -> None:
    """Run one coherence workload under several mechanisms, normalised to CPU-only."""

    def action() -> None:
        config = _prepare(config_path, seed, use_paper_scale, verbose)
        mechanisms = mechanism if mechanism else list(MechanismKind)
        trace_folder = _trace_folder(out, trace)
        reports = [
            report
            for run_seed in config.seeds
            for report in compare_mechanisms(
                config, mechanisms, run_seed, _base_folder(config_path), trace_folder
            )
        ]
        export(reports, out, export_format)

    _guarded(action)


@app.command()
def sweep(
    parameters_filename: Path = typer.Argument(
        Path("parameters.json"), help="Path to parameters file."
    ),
    parallel: bool = typer.Option(True, help="Use multiple cores to parallelise scenarios"),
    export_format: ExportFormat = typer.Option(ExportFormat.CSV, "--format", help="Result format."),
    verbose: bool = typer.Option(False, help="Log progress."),
) -> None:
    """Run every scenario of a parameters file into its output folder."""

    def action() -> None:
        if verbose:
            logging.getLogger().setLevel(logging.INFO)
        params = JSONParameters(parameters_filename)
        params.create_output_folder()
        reports = run_simulations(params, parallel)
        export(reports, params.output_folder / f"results.{export_format.value}", export_format)

    _guarded(action)


if __name__ == "__main__":
    main()
