"""Various classes and functions useful to the pim_simulation application."""

import logging
from typing import Callable, Dict, List, Optional

import numpy as np

_LOG = logging.getLogger(__name__)

VA_BITS = 48
WORD_BYTES = 8
LINE_BYTES = 64
WORDS_PER_LINE = LINE_BYTES // WORD_BYTES
MASK64 = (1 << 64) - 1
NULL_POINTER = MASK64

RELEASE_SAMPLE_PERIOD = 2**10


class InvariantViolation(Exception):
    """A simulator invariant did not hold."""

    def __init__(self, name: str, message: str, time: float = 0.0, event: int = 0):
        """Initialise with the failing check and where in the run it failed."""
        super().__init__(f"Invariant '{name}' violated at cycle {time} (event {event}): {message}")
        self.name = name
        self.time = time
        self.event = event


def line_of(address: int) -> int:
    """Return the line-aligned address containing address."""
    return address & ~(LINE_BYTES - 1)


def lines_spanned(address: int, size: int) -> List[int]:
    """Return every line-aligned address touched by [address, address + size)."""
    assert size > 0, "Access size must be positive"
    first = line_of(address)
    last = line_of(address + size - 1)
    return list(range(first, last + 1, LINE_BYTES))


def add64(*values: int) -> int:
    """Add integers with 64 bit wrap around."""
    return sum(values) & MASK64


class MultiplyShiftHash:
    """Universal multiply-shift hash from 64 bit keys onto 2^out_bits buckets."""

    def __init__(self, out_bits: int, rng: np.random.Generator):
        """Draw an odd multiplier from the given generator."""
        assert 0 < out_bits <= 64, f"Cannot hash onto {out_bits} bits"
        self.out_bits = out_bits
        self.multiplier = int(rng.integers(0, 2**63, dtype=np.uint64)) * 2 + 1

    def __call__(self, key: int) -> int:
        """Hash a single key."""
        return ((self.multiplier * key) & MASK64) >> (64 - self.out_bits)

    def hash_many(self, keys: np.ndarray) -> np.ndarray:  # type: ignore[type-arg]
        """Hash an array of keys at once."""
        with np.errstate(over="ignore"):
            products = keys.astype(np.uint64) * np.uint64(self.multiplier)
        return (products >> np.uint64(64 - self.out_bits)).astype(np.int64)


def child_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of a run seed."""
    return np.random.default_rng([seed, *stream])


class InvariantChecker:
    """Runs registered invariant checks every event (debug) or every 2^10 events (release)."""

    def __init__(self, profile: str = "debug"):
        """Initialise checker for a profile."""
        assert profile in ("debug", "release"), f"Unknown profile '{profile}'"
        self.profile = profile
        self.events = 0
        self.checks_run = 0
        self._checks: Dict[str, Callable[[], Optional[str]]] = {}

    def register(self, name: str, check: Callable[[], Optional[str]]) -> None:
        """Register a check returning None when it holds and a message otherwise."""
        self._checks[name] = check

    def event(self, time: float) -> None:
        """Record that an event happened, running checks when the profile asks for it."""
        self.events += 1
        if self.profile == "debug" or self.events % RELEASE_SAMPLE_PERIOD == 0:
            self.run_all(time)

    def run_all(self, time: float) -> None:
        """Run every registered check now."""
        self.checks_run += 1
        for name, check in self._checks.items():
            message = check()
            if message is not None:
                _LOG.error("Invariant %s failed: %s", name, message)
                raise InvariantViolation(name, message, time, self.events)
