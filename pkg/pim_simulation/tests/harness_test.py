"""Parameters, experiment runner, result export and command line tests."""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Tuple

import pytest
from pydantic import ValidationError
from typer.testing import CliRunner

from pim_simulation.main import CONFIG_EXIT, INVARIANT_EXIT, IO_EXIT, app
from pim_simulation.parameters import (
    ConfigError,
    ExperimentConfig,
    ExperimentKind,
    ExportFormat,
    JSONParameters,
    WorkloadConfig,
    load_config,
    paper_scale,
)
from pim_simulation.pim_utils import InvariantViolation
from pim_simulation.results import CSV_COLUMNS, MetricsReport, export, load_frame, load_reports
from pim_simulation.simulator import (
    IMPICA_TRACE,
    KERNEL_TRACE,
    MAPPING_DUMP,
    THREADS_VARIABLE,
    harness_threads,
    run_experiment,
    trace_path,
)

RUNNER = CliRunner()
INPUT_DATA = Path(__file__).parent / "input_data"

SMALL_GRAPH: Dict[str, Any] = {
    "experiment": "coherence",
    "profile": "release",
    "workload": {
        "kind": "graph",
        "vertices": 64,
        "edges": 128,
        "cpu_threads": 4,
        "pim_kernels": 4,
        "iterations": 1,
    },
}


def write_parameters(folder: Path, parameters: Dict[str, Any], name: str = "params.json") -> Path:
    """Dump parameters into a json file."""
    path = folder / name
    path.write_text(json.dumps(parameters), encoding="utf8")
    return path


@pytest.mark.unit
def test_sweep_expands_scenarios(sweep: Tuple[List[MetricsReport], JSONParameters]) -> None:
    """Are '?' values filled from their scenario column, with names taken from the csv."""
    _, params = sweep
    assert len(params) == 3
    configs = [params.experiment(idx) for idx in range(3)]
    assert [config.scenario_name for config in configs] == ["lazy", "fine", "coarse"]
    assert [config.coherence.mechanism.value for config in configs] == ["lazypim", "fg", "cg"]
    assert [config.workload.vertices for config in configs] == [64, 64, 96]
    assert all(config.coherence.rollback_limit == 3 for config in configs)
    assert configs[2].workload.edges == 128


@pytest.mark.unit
def test_sweep_report_order(reports: List[MetricsReport]) -> None:
    """Do sweep reports come back ordered by scenario, then seed."""
    assert [(report.experiment, report.mechanism, report.seed) for report in reports] == [
        ("coherence/lazy", "lazypim", 0),
        ("coherence/lazy", "lazypim", 1),
        ("coherence/fine", "fg", 0),
        ("coherence/fine", "fg", 1),
        ("coherence/coarse", "cg", 0),
        ("coherence/coarse", "cg", 1),
    ]


@pytest.mark.unit
def test_sweep_byte_ledger(reports: List[MetricsReport]) -> None:
    """Do the per-category byte metrics add up to the off-chip total of every run."""
    for report in reports:
        by_category = sum(
            value for name, value in report.metrics.items() if name.startswith("bytes.")
        )
        assert by_category == report.metrics["off_chip_bytes"], report.experiment
        assert report.metrics["cpu_ops"] > 0
    assert all(report.kernels for report in reports if report.mechanism == "lazypim")


@pytest.mark.unit
def test_missing_scenario_column(tmp_path: Path) -> None:
    """Is a '?' without a matching scenario column refused by name."""
    (tmp_path / "scenarios.csv").write_text("scenario_name\nonly\n", encoding="utf8")
    parameters = {
        "scenario_parameters_filename": "scenarios.csv",
        "workload": {"kind": "graph", "vertices": "?"},
    }
    with pytest.raises(ConfigError, match="workload/vertices"):
        JSONParameters(write_parameters(tmp_path, parameters))


@pytest.mark.unit
def test_invalid_json(tmp_path: Path) -> None:
    """Is a malformed parameters file a configuration error."""
    path = tmp_path / "broken.json"
    path.write_text("{ not json", encoding="utf8")
    with pytest.raises(ConfigError):
        JSONParameters(path)


@pytest.mark.unit
@pytest.mark.parametrize(
    "parameters, fragment",
    [
        ({"workload": {"kind": "graph", "bogus": 1}}, "bogus"),
        ({"config_version": 2}, "config_version"),
        ({"experiment": "impica-micro"}, "cannot drive"),
        ({"workload": {"kind": "tree"}}, "unknown workload"),
        ({"repeats": 0}, "repeats"),
        ({"coherence": {"rollback_limit": 0}}, "rollback_limit"),
        (
            {"experiment": "impica-micro", "workload": {"kind": "hash-table", "hit_ratio": 1.5}},
            "hit_ratio",
        ),
    ],
)
def test_invalid_parameters_named(
    tmp_path: Path, parameters: Dict[str, Any], fragment: str
) -> None:
    """Does validation name the offending key."""
    params = JSONParameters(write_parameters(tmp_path, parameters))
    with pytest.raises(ConfigError) as error:
        params.experiment(0)
    assert fragment in str(error.value)


@pytest.mark.unit
def test_defaults_and_paper_scale() -> None:
    """Are the defaults used without a file, and paper scale a copy with the published sizes."""
    config = load_config(None)
    assert config == ExperimentConfig()
    assert config.experiment == ExperimentKind.COHERENCE
    assert config.seeds == [0]
    scaled = paper_scale(config.model_copy(update={"seed": 4, "repeats": 3}))
    assert scaled.seeds == [4, 5, 6]
    assert scaled.workload.nodes == 30_000
    assert scaled.workload.transactions == 200_000
    assert config.workload.nodes == 1000, "Original config changed"


@pytest.mark.unit
def test_create_output_folder(tmp_path: Path) -> None:
    """Is an existing output folder cleared only once confirmed."""
    path = write_parameters(tmp_path, {"output": {"folder": "out"}})
    params = JSONParameters(path)
    assert params.output_folder == tmp_path / "out"
    params.create_output_folder(lambda _: True)
    stale = params.output_folder / "stale.csv"
    stale.write_text("old", encoding="utf8")
    params.create_output_folder(lambda _: True)
    assert params.output_folder.exists() and not stale.exists()


@pytest.mark.unit
def test_empty_export_is_header_only(tmp_path: Path) -> None:
    """Does exporting no reports write just the column headings."""
    path = export([], tmp_path / "empty.csv", ExportFormat.CSV)
    assert path.read_text(encoding="utf8") == ",".join(CSV_COLUMNS) + "\n"


@pytest.mark.unit
def test_json_export_round_trip(tmp_path: Path) -> None:
    """Do reports read back from a JSON export equal the written ones."""
    reports = [
        MetricsReport(
            experiment="coherence",
            mechanism="lazypim",
            seed=3,
            metrics={"makespan": 1234.5, "rollbacks": 2.0},
            kernels=[{"kernel-id": 0, "outcome": "committed", "conflict-lines": [7]}],
        ),
        MetricsReport(experiment="translation", mechanism="rpt", seed=0),
    ]
    path = export(reports, tmp_path / "results.json", ExportFormat.JSON)
    assert load_reports(path) == reports


@pytest.mark.unit
def test_negative_metric_refused() -> None:
    """Is a negative metric value refused by the report model."""
    with pytest.raises(ValidationError, match="makespan"):
        MetricsReport(experiment="x", mechanism="y", seed=0, metrics={"makespan": -1.0})


@pytest.mark.unit
def test_impica_micro_experiment(tmp_path: Path) -> None:
    """Does the micro experiment traverse every list and leave its traces."""
    config = ExperimentConfig(
        experiment=ExperimentKind.IMPICA_MICRO,
        workload=WorkloadConfig(kind="linked-list", lists=3, nodes=200),
    )
    report = run_experiment(config, seed=2, trace_folder=tmp_path)
    assert (report.experiment, report.mechanism, report.seed) == ("impica-micro", "rpt", 2)
    assert report.metrics["traversals"] == 3
    assert report.metrics["faults"] == 0
    assert trace_path(tmp_path, IMPICA_TRACE, 2).exists()
    assert json.loads(trace_path(tmp_path, MAPPING_DUMP, 2).read_text(encoding="utf8"))


@pytest.mark.unit
def test_impica_sensitivity_experiment() -> None:
    """Does the sensitivity experiment report both page tables on both engine models."""
    config = ExperimentConfig(
        experiment=ExperimentKind.IMPICA_SENSITIVITY,
        workload=WorkloadConfig(kind="linked-list", lists=4, nodes=100),
    )
    metrics = run_experiment(config).metrics
    for page_table in ("rpt", "four-level"):
        for mode in ("decoupled", "serial"):
            assert metrics[f"makespan.{page_table}.{mode}"] > 0
        assert metrics[f"overlap_speedup.{page_table}"] >= 1.0, "Overlap made traversals slower"


@pytest.mark.unit
def test_translation_experiment() -> None:
    """Do RPT walks read two entries to the four-level table's four, on identical mappings."""
    config = ExperimentConfig(
        experiment=ExperimentKind.TRANSLATION,
        workload=WorkloadConfig(kind="linked-list", translations=500),
    )
    metrics = run_experiment(config, seed=1).metrics
    assert metrics["translations"] == 500
    assert metrics["mismatches"] == 0
    assert (metrics["rpt_max_walk"], metrics["four_level_max_walk"]) == (2, 4)
    assert metrics["walk_ratio"] == 2.0


@pytest.mark.unit
def test_translation_export_matches_golden(tmp_path: Path) -> None:
    """Does the translation run export exactly the checked-in CSV."""
    out = tmp_path / "translation.csv"
    result = RUNNER.invoke(
        app, ["run", "--config", str(INPUT_DATA / "golden_translation.json"), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == (INPUT_DATA / "golden_translation.csv").read_bytes()


@pytest.mark.unit
def test_harness_threads(mocker: Any) -> None:
    """Is the worker count capped by the environment and a bad cap refused."""
    mocker.patch("multiprocessing.cpu_count", return_value=8)
    mocker.patch.dict(os.environ, {THREADS_VARIABLE: "3"})
    assert harness_threads() == 3
    mocker.patch.dict(os.environ, {THREADS_VARIABLE: "0"})
    assert harness_threads() == 1
    mocker.patch.dict(os.environ, {THREADS_VARIABLE: "many"})
    with pytest.raises(ConfigError):
        harness_threads()


@pytest.mark.unit
def test_run_command_writes_csv(tmp_path: Path) -> None:
    """Does the run command write one sorted metric table per repeat."""
    config = write_parameters(tmp_path, {**SMALL_GRAPH, "repeats": 2})
    out = tmp_path / "results.csv"
    result = RUNNER.invoke(app, ["run", "--config", str(config), "--out", str(out), "--seed", "5"])
    assert result.exit_code == 0, result.output
    frame = load_frame(out)
    assert list(frame.columns) == CSV_COLUMNS
    assert sorted(set(frame["seed"].tolist())) == [5, 6]
    assert set(frame["mechanism"]) == {"lazypim"}
    first = frame[frame["seed"] == 5]["metric"].tolist()
    assert first == sorted(first)
    assert "makespan" in first


@pytest.mark.unit
def test_run_command_is_deterministic(tmp_path: Path) -> None:
    """Do two runs with the same parameters and seed write byte-identical results."""
    config = write_parameters(tmp_path, SMALL_GRAPH)
    outputs = [tmp_path / "first.json", tmp_path / "second.json"]
    for out in outputs:
        result = RUNNER.invoke(
            app, ["run", "--config", str(config), "--out", str(out), "--format", "json"]
        )
        assert result.exit_code == 0, result.output
    assert outputs[0].read_bytes() == outputs[1].read_bytes()


@pytest.mark.unit
def test_compare_command_normalises_to_cpu_only(tmp_path: Path) -> None:
    """Does compare run CPU-only first and give every mechanism ratios against it."""
    config = write_parameters(tmp_path, SMALL_GRAPH)
    out = tmp_path / "trace" / "comparison.json"
    result = RUNNER.invoke(
        app,
        [
            "compare",
            "--config",
            str(config),
            "--out",
            str(out),
            "--format",
            "json",
            "--mechanism",
            "fg",
            "--mechanism",
            "lazypim",
            "--trace",
        ],
    )
    assert result.exit_code == 0, result.output
    reports = load_reports(out)
    assert [report.mechanism for report in reports] == ["cpu-only", "fg", "lazypim"]
    base = reports[0].metrics
    assert base["normalized_makespan"] == base["speedup"] == base["normalized_traffic"] == 1.0
    for report in reports[1:]:
        metrics = report.metrics
        assert metrics["normalized_traffic"] == pytest.approx(
            metrics["off_chip_bytes"] / base["off_chip_bytes"]
        )
        assert metrics["speedup"] == pytest.approx(base["makespan"] / metrics["makespan"])
    lines = trace_path(out.parent, KERNEL_TRACE, 0).read_text(encoding="utf8").splitlines()
    assert lines, "No kernel trace written"
    assert all("outcome" in json.loads(line) for line in lines)


@pytest.mark.unit
def test_compare_keeps_one_kernel_trace_per_seed(tmp_path: Path) -> None:
    """Does every repeat of compare leave its own kernel trace."""
    config = write_parameters(tmp_path, {**SMALL_GRAPH, "seed": 5, "repeats": 2})
    out = tmp_path / "comparison.json"
    result = RUNNER.invoke(
        app,
        ["compare", "--config", str(config), "--out", str(out), "--format", "json"]
        + ["--mechanism", "lazypim", "--trace"],
    )
    assert result.exit_code == 0, result.output
    assert [report.seed for report in load_reports(out)] == [5, 5, 6, 6]
    traces = sorted(path.name for path in tmp_path.glob("lazypim_kernels.*"))
    assert traces == ["lazypim_kernels.seed5.jsonl", "lazypim_kernels.seed6.jsonl"]


@pytest.mark.unit
def test_compare_refuses_pointer_experiments(tmp_path: Path) -> None:
    """Does compare exit with the configuration code on a non-coherence experiment."""
    config = write_parameters(
        tmp_path, {"experiment": "translation", "workload": {"kind": "linked-list"}}
    )
    result = RUNNER.invoke(app, ["compare", "--config", str(config)])
    assert result.exit_code == CONFIG_EXIT
    assert "coherence" in result.output


@pytest.mark.unit
def test_exit_codes(tmp_path: Path, mocker: Any) -> None:
    """Do configuration, invariant and file errors map to their exit codes."""
    bad = write_parameters(tmp_path, {"workload": {"kind": "graph", "bogus": 1}})
    result = RUNNER.invoke(app, ["run", "--config", str(bad)])
    assert result.exit_code == CONFIG_EXIT
    assert "bogus" in result.output

    result = RUNNER.invoke(app, ["run", "--config", str(tmp_path / "absent.json")])
    assert result.exit_code == CONFIG_EXIT
    assert "does not exist" in result.output

    good = write_parameters(tmp_path, SMALL_GRAPH, "good.json")
    unwritable = tmp_path / "missing_dir" / "x.csv"
    result = RUNNER.invoke(app, ["run", "--config", str(good), "--out", str(unwritable)])
    assert result.exit_code == IO_EXIT

    mocker.patch(
        "pim_simulation.main.run_experiment",
        side_effect=InvariantViolation("swmr", "two writers", 12.0),
    )
    result = RUNNER.invoke(app, ["run", "--config", str(good), "--out", str(tmp_path / "x.csv")])
    assert result.exit_code == INVARIANT_EXIT
    assert "swmr" in result.output and "--trace" in result.output


@pytest.mark.unit
def test_sweep_command(tmp_path: Path, mocker: Any) -> None:
    """Does sweep clear its output folder once confirmed and write the results there."""
    path = write_parameters(tmp_path, {**SMALL_GRAPH, "output": {"folder": "output"}})
    stale = tmp_path / "output" / "stale.txt"
    stale.parent.mkdir()
    stale.write_text("old", encoding="utf8")

    mocker.patch("builtins.input", return_value="N")
    result = RUNNER.invoke(app, ["sweep", str(path), "--no-parallel"])
    assert result.exit_code == 0, result.output
    assert stale.exists(), "Output cleared without confirmation"
    assert not (tmp_path / "output" / "results.csv").exists()

    mocker.patch("builtins.input", return_value="Y")
    result = RUNNER.invoke(app, ["sweep", str(path), "--no-parallel", "--format", "json"])
    assert result.exit_code == 0, result.output
    assert not stale.exists()
    (report,) = load_reports(tmp_path / "output" / "results.json")
    assert report.mechanism == "lazypim"
