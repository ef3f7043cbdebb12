"""Bloom-filter signature tests."""

import numpy as np
import pytest

from pim_simulation.lazypim.signature import (
    SIGNATURE_BYTES,
    SIGNATURE_CAPACITY,
    Signature,
    sig_match,
)
from pim_simulation.pim_utils import child_rng

PROBES = 100_000


def distinct_lines(seed: int, count: int) -> np.ndarray:
    """Distinct random line addresses."""
    rng = child_rng(seed, 99)
    lines = np.unique(rng.integers(0, 2**40, size=count + count // 10, dtype=np.uint64))
    while len(lines) < count:
        extra = rng.integers(0, 2**40, size=count, dtype=np.uint64)
        lines = np.unique(np.concatenate([lines, extra]))
    return rng.permutation(lines)[:count]


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(20))
def test_false_positive_rate_at_capacity(seed: int) -> None:
    """Does a full 256 byte signature test positive for about 20% of non-members."""
    lines = distinct_lines(seed, SIGNATURE_CAPACITY + PROBES)
    members, probes = lines[:SIGNATURE_CAPACITY], lines[SIGNATURE_CAPACITY:]
    signature = Signature(child_rng(seed, 1))
    for line in members.tolist():
        signature.insert(line)
    assert signature.chain_length == 1, "607 insertions must fit one filter"
    assert signature.transfer_bytes == SIGNATURE_BYTES == 256
    assert signature.test_many(members.tolist()).all(), "False negative"
    rate = signature.test_many(probes.tolist()).mean()
    assert 0.17 <= rate <= 0.23, f"False positive rate {rate}"


@pytest.mark.unit
def test_chaining_past_capacity() -> None:
    """Is a new filter chained once the current one is full, with no false negatives."""
    lines = distinct_lines(3, 2000).tolist()
    signature = Signature(child_rng(3, 1))
    for line in lines:
        signature.insert(line)
    assert signature.chain_length >= 3
    assert signature.transfer_bytes == signature.chain_length * 256
    assert all(signature.test(line) for line in lines)
    assert signature.match(lines) == lines


@pytest.mark.unit
def test_scalar_and_vector_tests_agree() -> None:
    """Do single and vectorised membership tests give the same answers."""
    lines = distinct_lines(5, 3000).tolist()
    signature = Signature(child_rng(5, 1))
    for line in lines[:900]:
        signature.insert(line)
    vector = signature.test_many(lines)
    assert vector.tolist() == [signature.test(line) for line in lines]
    assert sig_match(signature, lines) == [line for line in lines if signature.test(line)]


@pytest.mark.unit
def test_repeated_insert_adds_nothing() -> None:
    """Does inserting an address that already tests positive leave the filter unchanged."""
    signature = Signature(child_rng(0, 1))
    signature.insert(42)
    signature.insert(42)
    assert signature.insertions == 1
    assert len(signature) == 1


@pytest.mark.unit
def test_clear() -> None:
    """Does clearing forget every address and chained filter."""
    signature = Signature(child_rng(1, 1))
    for line in range(1500):
        signature.insert(line)
    signature.clear()
    assert signature.insertions == 0
    assert signature.chain_length == 1
    assert not signature.test_many(range(1500)).any()


@pytest.mark.unit
def test_exact_mode() -> None:
    """Does an exact signature never test positive by accident and size like a chain."""
    lines = distinct_lines(2, 5000).tolist()
    signature = Signature(child_rng(2, 1), exact=True)
    for line in lines[:1300]:
        signature.insert(line)
    assert signature.match(lines) == lines[:1300]
    assert signature.chain_length == 3
    assert signature.transfer_bytes == 3 * 256
    assert not signature.test(lines[-1])


@pytest.mark.unit
def test_empty_signature() -> None:
    """Does an empty signature match nothing and still ship one filter."""
    signature = Signature(child_rng(4, 1))
    assert signature.match([]) == []
    assert signature.match([1, 2, 3]) == []
    assert signature.transfer_bytes == 256
