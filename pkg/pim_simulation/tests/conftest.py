"""Fixtures for pytest."""

from pathlib import Path
from typing import Any, List, Tuple

import pytest

from pim_simulation.parameters import JSONParameters
from pim_simulation.results import MetricsReport
from pim_simulation.simulator import run_simulations

FILE_LOC = Path(__file__)
PARAMS_LOC = FILE_LOC.parent / "parameters.json"


@pytest.fixture(name="sweep", scope="session")
def fixture_sweep(
    session_mocker: Any, tmpdir_factory: Any
) -> Tuple[List[MetricsReport], JSONParameters]:
    """Run the test sweep and return its reports with the corresponding parameters."""
    session_mocker.patch("builtins.input", return_value="Y")
    params = JSONParameters(PARAMS_LOC)
    params.output_folder = Path(tmpdir_factory.mktemp("output"))
    return run_simulations(params, use_parallel=False), params


@pytest.fixture(name="reports")
def fixture_reports(sweep: Tuple[List[MetricsReport], JSONParameters]) -> List[MetricsReport]:
    """Get a list of all test sweep reports."""
    return sweep[0]
