"""Address signatures: parallel Bloom filters chained once a filter holds its capacity."""

import math
from typing import Iterable, List, Set

import numpy as np

from pim_simulation.pim_utils import MultiplyShiftHash

SIGNATURE_BITS = 2048
SIGNATURE_HASHES = 2
# 2048 bits with two hashes stay under a 20% false-positive rate up to this many addresses.
SIGNATURE_CAPACITY = 607
SIGNATURE_BYTES = SIGNATURE_BITS // 8


class Signature:
    """Set of line addresses with no false negatives.

    Each filter is split into one bank per hash function. A new filter is chained when the
    current one has taken its capacity of insertions; a lookup tests every filter of the chain.
    In exact mode the addresses are kept in a set and nothing tests positive by accident.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        rng: np.random.Generator,
        bits: int = SIGNATURE_BITS,
        hashes: int = SIGNATURE_HASHES,
        capacity: int = SIGNATURE_CAPACITY,
        exact: bool = False,
    ):
        """Create an empty signature with hash functions drawn from rng."""
        assert bits % hashes == 0, "Banks must split the filter evenly"
        bank_bits = bits // hashes
        assert bank_bits & (bank_bits - 1) == 0, "Bank size must be a power of 2"
        self.bits = bits
        self.bank_bits = bank_bits
        self.capacity = capacity
        self.exact = exact
        self.hashes = [MultiplyShiftHash(int(math.log2(bank_bits)), rng) for _ in range(hashes)]
        self.filters: List[np.ndarray] = []  # type: ignore[type-arg]
        self.counts: List[int] = []
        self.members: Set[int] = set()
        self.clear()

    def clear(self) -> None:
        """Forget every address."""
        self.filters = [np.zeros((len(self.hashes), self.bank_bits), dtype=bool)]
        self.counts = [0]
        self.members = set()

    def insert(self, line: int) -> None:
        """Add a line address; an address that already tests positive changes nothing."""
        if self.exact:
            self.members.add(line)
            return
        if self.test(line):
            return
        if self.counts[-1] >= self.capacity:
            self.filters.append(np.zeros((len(self.hashes), self.bank_bits), dtype=bool))
            self.counts.append(0)
        current = self.filters[-1]
        for bank, hash_function in enumerate(self.hashes):
            current[bank, hash_function(line)] = True
        self.counts[-1] += 1

    def test(self, line: int) -> bool:
        """Whether the address may have been inserted."""
        if self.exact:
            return line in self.members
        indices = [hash_function(line) for hash_function in self.hashes]
        return any(
            all(bank_bits[bank, index] for bank, index in enumerate(indices))
            for bank_bits in self.filters
        )

    def test_many(self, lines: Iterable[int]) -> np.ndarray:  # type: ignore[type-arg]
        """Vectorised test of many addresses."""
        keys = np.fromiter(lines, dtype=np.uint64)
        if self.exact:
            return np.array([int(key) in self.members for key in keys], dtype=bool)
        hits = np.zeros(len(keys), dtype=bool)
        if len(keys) == 0:
            return hits
        indices = [hash_function.hash_many(keys) for hash_function in self.hashes]
        for bank_bits in self.filters:
            present = np.ones(len(keys), dtype=bool)
            for bank, index in enumerate(indices):
                present &= bank_bits[bank, index]
            hits |= present
        return hits

    def match(self, lines: Iterable[int]) -> List[int]:
        """Addresses of lines that test positive, in the order given."""
        candidates = list(lines)
        hits = self.test_many(candidates)
        return [line for line, hit in zip(candidates, hits) if hit]

    @property
    def chain_length(self) -> int:
        """Number of chained filters, at least one."""
        if self.exact:
            return max(1, -(-len(self.members) // self.capacity))
        return len(self.filters)

    @property
    def transfer_bytes(self) -> int:
        """Bytes needed to ship the signature."""
        return self.chain_length * (self.bits // 8)

    @property
    def insertions(self) -> int:
        """Addresses recorded so far."""
        if self.exact:
            return len(self.members)
        return sum(self.counts)

    def __len__(self) -> int:
        """Alias for insertions."""
        return self.insertions


def sig_match(signature: Signature, lines: Iterable[int]) -> List[int]:
    """Every line of an exact set that tests positive in a signature."""
    return signature.match(lines)
