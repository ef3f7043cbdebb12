"""Various unit classes useful to the pim_simulation."""

import abc

DEFAULT_DATA_SIZE_UNITS = "B"
DATA_SIZE_FACTORS = {
    "B": 1,
    "KB": 2**10,
    "MB": 2**20,
    "GB": 2**30,
    "TB": 2**40,
}

DEFAULT_FREQUENCY_UNITS = "Hz"
FREQUENCY_FACTORS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}

# Bandwidths are quoted in decimal units.
DEFAULT_BANDWIDTH_UNITS = "B/s"
BANDWIDTH_FACTORS = {"B/s": 1.0, "KB/s": 1e3, "MB/s": 1e6, "GB/s": 1e9}


class Units:
    """Units class for easy unit conversion."""

    @abc.abstractmethod
    def __init__(self, value: float):
        """Initialize units."""
        self.value = value


class DataSize(Units):
    """Amount of data. Stored internally as bytes."""

    def __init__(self, size: float, units: str = DEFAULT_DATA_SIZE_UNITS):
        """Initialize data size specifying units.

        Defaults to DEFAULT_DATA_SIZE_UNITS if units not specified.
        """
        super().__init__(size * DATA_SIZE_FACTORS[units])

    def get(self, units: str = DEFAULT_DATA_SIZE_UNITS) -> float:
        """Get data size in the given units."""
        return self.value / DATA_SIZE_FACTORS[units]

    def bytes(self) -> int:
        """Whole number of bytes."""
        assert float(self.value).is_integer(), f"{self.value} is not a whole number of bytes"
        return int(self.value)


class Frequency(Units):
    """Clock frequency. Stored internally as Hz."""

    def __init__(self, frequency: float, units: str = DEFAULT_FREQUENCY_UNITS):
        """Initialize frequency specifying units."""
        super().__init__(frequency * FREQUENCY_FACTORS[units])

    def get(self, units: str = DEFAULT_FREQUENCY_UNITS) -> float:
        """Get frequency in the given units."""
        return self.value / FREQUENCY_FACTORS[units]


class Bandwidth(Units):
    """Bandwidth class. Stored internally as bytes/second."""

    def __init__(self, bandwidth: float, units: str = DEFAULT_BANDWIDTH_UNITS):
        """Initialize bandwidth specifying units."""
        super().__init__(bandwidth * BANDWIDTH_FACTORS[units])

    def get(self, units: str = DEFAULT_BANDWIDTH_UNITS) -> float:
        """Get bandwidth in the given units."""
        return self.value / BANDWIDTH_FACTORS[units]

    def per_cycle(self, clock: Frequency) -> float:
        """Bytes moved per clock cycle.

        Usage:
            >>> from pim_simulation.units import Bandwidth, Frequency
            >>> Bandwidth(12.8, "GB/s").per_cycle(Frequency(2, "GHz"))
            6.4
        """
        return self.value / clock.get("Hz")
