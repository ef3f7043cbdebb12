"""Class for reading experiment parameters, with scenario expansion from a csv file."""

import copy
import json
import logging
import shutil
import sys
from enum import Enum
from functools import reduce
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic import model_validator

from pim_simulation.coherence.system import CoherenceConfig
from pim_simulation.impica.engine import ImpicaConfig
from pim_simulation.memory.memory_system import TimingConfig
from pim_simulation.read_csv import CSVFile

_LOG = logging.getLogger(__name__)

CONFIG_VERSION = 1

POINTER_WORKLOADS = ("linked-list", "hash-table", "btree")
COHERENCE_WORKLOADS = ("graph", "htap", "random", "adversarial")


class ConfigError(Exception):
    """Experiment parameters are missing, malformed or out of range."""


class ExperimentKind(Enum):
    """Family of experiment."""

    IMPICA_MICRO = "impica-micro"
    IMPICA_SENSITIVITY = "impica-sensitivity"
    TRANSLATION = "translation"
    COHERENCE = "coherence"


class ExportFormat(Enum):
    """Result file format."""

    CSV = "csv"
    JSON = "json"


class WorkloadConfig(BaseModel):  # pylint: disable=too-many-instance-attributes
    """Workload generator parameters; each generator reads the fields it needs."""

    model_config = ConfigDict(extra="forbid")

    kind: str = "graph"
    # pointer chasing
    lists: int = 2
    nodes: int = 1000
    buckets: int = 2**14
    fill: Optional[int] = None
    keys: int = 100_000
    lookups: int = 1000
    hit_ratio: float = 0.5
    random_insert: bool = False
    locality: float = 0.0
    translations: int = 10_000
    # coherence
    vertices: int = 4096
    edges: int = 8192
    cpu_threads: int = 16
    pim_kernels: int = 16
    iterations: int = 2
    edge_list: Optional[str] = None
    tuples: int = 10_000
    transactions: int = 2000
    analytic_kernels: int = 16

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, value: str) -> str:
        if value not in POINTER_WORKLOADS + COHERENCE_WORKLOADS:
            raise ValueError(f"unknown workload '{value}'")
        return value

    @field_validator("lists", "nodes", "keys", "translations", "vertices", "tuples")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator(
        "lookups", "edges", "cpu_threads", "pim_kernels", "iterations", "transactions"
    )
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must not be negative")
        return value

    @field_validator("hit_ratio", "locality")
    @classmethod
    def _fraction(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("must be within [0, 1]")
        return value


class OutputConfig(BaseModel):
    """Where and how results are written."""

    model_config = ConfigDict(extra="forbid")

    folder: str = "output"
    format: ExportFormat = ExportFormat.CSV
    trace: bool = False


class ExperimentConfig(BaseModel):
    """One validated experiment."""

    model_config = ConfigDict(extra="forbid")

    config_version: int = CONFIG_VERSION
    experiment: ExperimentKind = ExperimentKind.COHERENCE
    seed: int = 0
    repeats: int = Field(default=1, ge=1)
    profile: Literal["debug", "release"] = "release"
    timing: TimingConfig = Field(default_factory=TimingConfig)
    impica: ImpicaConfig = Field(default_factory=ImpicaConfig)
    coherence: CoherenceConfig = Field(default_factory=CoherenceConfig)
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    scenario_name: str = ""

    @field_validator("config_version")
    @classmethod
    def _supported_version(cls, value: int) -> int:
        if value != CONFIG_VERSION:
            raise ValueError(f"config_version {value} is not supported (expected {CONFIG_VERSION})")
        return value

    @model_validator(mode="after")
    def _workload_fits_experiment(self) -> "ExperimentConfig":
        if self.experiment == ExperimentKind.COHERENCE:
            allowed = COHERENCE_WORKLOADS
        else:
            allowed = POINTER_WORKLOADS
        if self.workload.kind not in allowed:
            raise ValueError(
                f"workload '{self.workload.kind}' cannot drive a {self.experiment.value} experiment"
            )
        return self

    @property
    def seeds(self) -> List[int]:
        """Seeds of every repeat."""
        return list(range(self.seed, self.seed + self.repeats))


def paper_scale(config: ExperimentConfig) -> ExperimentConfig:
    """Same experiment with the published workload sizes."""
    workload = config.workload.model_copy(
        update={
            "nodes": 30_000,
            "buckets": 2**20,
            "fill": 3 * 2**19,
            "lookups": 100_000,
            "keys": 3_000_000,
            "random_insert": True,
            "transactions": 200_000,
            "analytic_kernels": 256,
        }
    )
    return config.model_copy(update={"workload": workload})


def _get_from_dict(data_dict: Dict[str, Any], key_list: Union[str, Sequence[str]]) -> Optional[Any]:
    """Get value corresponding to a list of keys in nested dictionaries."""
    if isinstance(key_list, str):
        return data_dict.get(key_list)
    return reduce(
        lambda d, key: d.get(key) if isinstance(d, dict) else None,  # type: ignore
        key_list,
        data_dict,
    )


def _set_in_dict(
    data_dict: Dict[str, Any],
    key_list: Union[str, Sequence[str]],
    value: Any,
) -> None:
    """Set value corresponding to a list of keys in nested dictionaries."""
    if isinstance(key_list, str):
        data_dict[key_list] = value
    else:
        _get_from_dict(data_dict, key_list[:-1])[key_list[-1]] = value  # type: ignore


def commandline_confirm(message: str) -> bool:
    """Confirm message using command line.

    Args:
        message (str): message

    Returns:
        bool: User response
    """
    cont = input(f"{message}\nEnter 'Y' if yes and 'N' if no \n")
    return cont.lower().strip() == "y"


class JSONParameters:
    """Experiment parameters read from a json file, one entry per scenario."""

    def __init__(self, parameters_file: Path):
        """Read the parameters and expand '?' values from the scenario csv file.

        Args:
            parameters_file (Path): filepath to json parameters file from current working directory

        Raises:
            ConfigError: if the file is missing or not valid json, or the scenario file lacks a
                column
        """
        if not parameters_file.is_file():
            raise ConfigError(f"Error: parameters file '{parameters_file}' does not exist")
        self.folder = parameters_file.parent
        self.filepath = parameters_file
        with open(parameters_file, encoding="utf8") as file:
            try:
                self.parameters: Dict[str, Any] = json.load(file)
            except json.JSONDecodeError as error:
                raise ConfigError(
                    f"Error: '{parameters_file}' is not valid json: {error}"
                ) from error

        self.scenarios: List[Dict[str, Any]] = []

        if "scenario_parameters_filename" in self.parameters:
            self.csv_scenarios = CSVFile(
                self.folder / self.parameters.pop("scenario_parameters_filename")
            )
            headings = self.csv_scenarios.get_column_headings()

            def recurse_through_dictionaries(dictionary_path: List[str], dictionary: Any) -> None:
                if isinstance(dictionary, str) and dictionary == "?":
                    column = "/".join(dictionary_path)
                    if column not in headings:
                        raise ConfigError(
                            f"Error: '{column}' is '?' in '{self.filepath}' but has no column in "
                            f"'{self.csv_scenarios.filename}'"
                        )
                    if len(self.scenarios) == 0:
                        # Haven't yet deep copied self.scenarios
                        self.scenarios = [
                            copy.deepcopy(self.parameters) for _ in range(len(self.csv_scenarios))
                        ]
                    for scenario_idx, scenario in enumerate(self.scenarios):
                        _set_in_dict(
                            scenario,
                            dictionary_path,
                            self.csv_scenarios.get_cell(column, scenario_idx),
                        )
                elif isinstance(dictionary, dict):
                    for element in dictionary:
                        recurse_through_dictionaries(
                            dictionary_path + [element], dictionary[element]
                        )

            recurse_through_dictionaries([], self.parameters)

            if "scenario_name" in headings:
                for scenario_idx, scenario in enumerate(self.scenarios):
                    scenario["scenario_name"] = str(
                        self.csv_scenarios.get_cell("scenario_name", scenario_idx)
                    )

        if len(self.scenarios) == 0:
            self.scenarios = [self.parameters]
        folder = _get_from_dict(self.scenarios[0], ["output", "folder"]) or "output"
        self.output_folder: Path = self.folder / folder

    def __len__(self) -> int:
        """Number of scenarios."""
        return len(self.scenarios)

    def experiment(self, scenario_idx: int) -> ExperimentConfig:
        """Validated experiment of a scenario.

        Raises:
            ConfigError: naming every offending key
        """
        try:
            return ExperimentConfig.model_validate(self.scenarios[scenario_idx])
        except ValidationError as error:
            raise ConfigError(
                f"Error: invalid parameters in '{self.filepath}':\n{error}"
            ) from error

    def create_output_folder(
        self, confirmation: Callable[[str], bool] = commandline_confirm
    ) -> None:
        """Create output folder specified in parameters (and clear if non-empty).

        Args:
            confirmation (Callable[[str], bool]): confirmation method
        """
        if self.output_folder.exists():
            if any(self.output_folder.iterdir()):
                if not confirmation(
                    "Output folder already exists and is not empty, "
                    + "do you want to overwrite its contents?\n"
                ):
                    _LOG.info("Aborting")
                    sys.exit()
            shutil.rmtree(self.output_folder)
        self.output_folder.mkdir(parents=True)


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Experiment from a parameters file (first scenario), or the defaults without one."""
    if path is None:
        return ExperimentConfig()
    return JSONParameters(path).experiment(0)
