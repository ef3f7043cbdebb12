"""Unit conversion and shared helper tests."""

import numpy as np
import pytest

from pim_simulation.pim_utils import (
    InvariantChecker,
    InvariantViolation,
    MultiplyShiftHash,
    add64,
    child_rng,
    lines_spanned,
)
from pim_simulation.units import Bandwidth, DataSize, Frequency


@pytest.mark.unit
def test_bandwidth_per_cycle() -> None:
    """Does 12.8 GB/s at 2 GHz move 6.4 bytes per cycle."""
    assert Bandwidth(12.8, "GB/s").per_cycle(Frequency(2, "GHz")) == pytest.approx(6.4)
    assert Bandwidth(51.2, "GB/s").get("MB/s") == pytest.approx(51_200.0)


@pytest.mark.unit
def test_data_size() -> None:
    """Are binary data size units converted exactly."""
    assert DataSize(64, "KB").bytes() == 65_536
    assert DataSize(2, "MB").get("KB") == 2048
    with pytest.raises(AssertionError):
        DataSize(0.5).bytes()


@pytest.mark.unit
def test_lines_spanned() -> None:
    """Does an access crossing a line boundary touch both lines."""
    assert lines_spanned(0, 64) == [0]
    assert lines_spanned(60, 8) == [0, 64]
    assert lines_spanned(128, 1) == [128]


@pytest.mark.unit
def test_add64_wraps() -> None:
    """Does 64 bit addition wrap around."""
    assert add64(2**64 - 1, 2) == 1


@pytest.mark.unit
def test_hash_many_matches_scalar() -> None:
    """Does the vectorised hash agree with the scalar one."""
    hash_function = MultiplyShiftHash(11, child_rng(3, 1))
    keys = child_rng(3, 2).integers(0, 2**63, size=500, dtype=np.uint64)
    expected = [hash_function(int(key)) for key in keys]
    assert hash_function.hash_many(keys).tolist() == expected
    assert all(0 <= value < 2**11 for value in expected)


@pytest.mark.unit
def test_child_rng_streams_independent() -> None:
    """Do streams of one seed differ while each stream is reproducible."""
    first = child_rng(5, 1).integers(0, 2**32, size=4).tolist()
    assert first == child_rng(5, 1).integers(0, 2**32, size=4).tolist()
    assert first != child_rng(5, 2).integers(0, 2**32, size=4).tolist()


@pytest.mark.unit
def test_checker_profiles() -> None:
    """Does debug check every event and release every 1024th."""
    calls = []
    debug = InvariantChecker("debug")
    debug.register("count", lambda: calls.append(1))  # type: ignore[func-returns-value]
    for _ in range(10):
        debug.event(0.0)
    assert len(calls) == 10
    release = InvariantChecker("release")
    for _ in range(2048):
        release.event(0.0)
    assert release.checks_run == 2


@pytest.mark.unit
def test_checker_raises_with_position() -> None:
    """Does a failing check raise with its name, time and event number."""
    checker = InvariantChecker("debug")
    checker.register("always", lambda: "broken")
    with pytest.raises(InvariantViolation) as error:
        checker.event(12.0)
    assert error.value.name == "always"
    assert error.value.time == 12.0
    assert error.value.event == 1
