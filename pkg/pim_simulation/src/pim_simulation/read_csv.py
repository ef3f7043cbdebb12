"""Functions for reading data from csv and edge-list files."""

from pathlib import Path
from typing import Any, Iterator, List, NamedTuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd


class ColumnNotFoundException(Exception):
    """ColumnNotFoundException."""


def python_value(value: Any) -> Any:
    """Convert numpy scalars read by pandas to plain Python values."""
    if isinstance(value, np.generic):
        return value.item()
    return value


class CSVFile:
    """CSVFile class to provide wrapper for csv files (with useful errors)."""

    def __init__(self, filename: Path):
        """Initialize CSVFile class.

        Args:
            filename (Path): path to csv file from current working directory
        """
        self.filename = filename
        self.csv_dataframe: pd.DataFrame = pd.DataFrame(pd.read_csv(filename))
        self.csv_dataframe.dropna(how="all", inplace=True)

    def get_column(self, column: Union[str, int]) -> pd.Series:  # type: ignore[type-arg]
        """Column by heading or position.

        Raises:
            ColumnNotFoundException: if there is no column with that heading
        """
        if isinstance(column, int):
            return pd.Series(self.csv_dataframe.iloc[:, column])
        if column not in self.csv_dataframe:
            raise ColumnNotFoundException(
                f"Error: No column labelled '{column}' in '{self.filename}'"
            )
        return pd.Series(self.csv_dataframe[column])

    def get_column_headings(self) -> List[str]:
        """Get list of column headings."""
        return [str(heading) for heading in self.csv_dataframe.columns.values.tolist()]

    def get_cell(self, column: Union[str, int], cell_idx: int) -> Any:
        """Cell of a column as a plain Python value."""
        return python_value(self.get_column(column).iloc[cell_idx])

    def __len__(self) -> int:
        """Number of rows."""
        return len(self.csv_dataframe.axes[0])

    def __getitem__(self, i: Union[str, int]) -> pd.Series:  # type: ignore[type-arg]
        """Alias for get_column."""
        return self.get_column(i)

    def __iter__(self) -> Iterator[NamedTuple]:
        """Iterate over rows in csv file."""
        for row in self.csv_dataframe.itertuples():
            yield row


def read_edge_list(filename: Path) -> npt.NDArray[np.int64]:
    """Read a whitespace separated edge list ("u v" per line, '#' comments).

    Vertex ids are 0-based.

    Returns:
        npt.NDArray[np.int64]: array of shape (edges, 2)
    """
    try:
        edges = pd.read_csv(
            filename, sep=r"\s+", comment="#", header=None, usecols=[0, 1], dtype=np.int64
        )
    except pd.errors.EmptyDataError:
        return np.zeros((0, 2), dtype=np.int64)
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = edges.to_numpy().astype(np.int64)
    assert pairs.min() >= 0, f"Negative vertex id in '{filename}'"
    return pairs
