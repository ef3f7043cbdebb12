"""Speculative kernel attempts: the recorded address sets and the outcome of each attempt."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Set

import numpy as np

from pim_simulation.lazypim.signature import Signature
from pim_simulation.pim_utils import WORDS_PER_LINE
from pim_simulation.workloads.coherence_workloads import KernelSpec

FULL_MASK = (1 << WORDS_PER_LINE) - 1


class Outcome(Enum):
    """How an attempt of a kernel ended."""

    COMMITTED = "committed"
    ROLLED_BACK = "rolled-back"
    LOCKED_COMMIT = "locked-commit"


class AccessOrigin(Enum):
    """Who made a recorded access."""

    CPU_WRITE = "cpu-write"
    PIM_READ = "pim-read"
    PIM_WRITE = "pim-write"


def merge_commit_line(dram_line: List[int], speculative: List[int], mask: int) -> List[int]:
    """Words whose mask bit is set come from the speculative line, the rest from DRAM."""
    assert 0 <= mask <= FULL_MASK, f"Dirty mask {mask:#x} wider than a line"
    return [
        speculative[word] if mask >> word & 1 else dram_line[word] for word in range(WORDS_PER_LINE)
    ]


@dataclass
class AttemptRecord:  # pylint: disable=too-many-instance-attributes
    """What happened in one execution of a kernel."""

    number: int
    locked: bool
    start_time: float
    end_time: float = 0.0
    outcome: Optional[Outcome] = None
    exact_conflict: bool = False
    detected: bool = False
    false_positive: bool = False
    pim_conflict: bool = False
    overflow: bool = False
    conflict_lines: List[int] = field(default_factory=list)
    read_links: int = 0
    write_links: int = 0
    signature_bytes: int = 0
    flush_bytes: int = 0
    invalidation_bytes: int = 0


@dataclass
class KernelRecord:
    """All attempts of one kernel; the outcome is set once, by the attempt that commits."""

    kernel: KernelSpec
    attempts: List[AttemptRecord] = field(default_factory=list)
    outcome: Optional[Outcome] = None

    @property
    def rollbacks(self) -> int:
        """Attempts that ended in a rollback."""
        return sum(1 for attempt in self.attempts if attempt.outcome == Outcome.ROLLED_BACK)

    def set_outcome(self, outcome: Outcome) -> None:
        """Record the final outcome."""
        assert self.outcome is None, f"Kernel {self.kernel.kernel_id} already finished"
        assert outcome != Outcome.ROLLED_BACK, "A rollback is not a final outcome"
        self.outcome = outcome

    @property
    def coherence_bytes(self) -> int:
        """Off-chip bytes spent on this kernel's coherence."""
        return sum(
            attempt.signature_bytes + attempt.flush_bytes + attempt.invalidation_bytes
            for attempt in self.attempts
        )

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready summary."""
        assert self.outcome is not None, f"Kernel {self.kernel.kernel_id} never finished"
        return {
            "kernel-id": self.kernel.kernel_id,
            "pim-core": self.kernel.pim_core,
            "outcome": self.outcome.value,
            "attempts": len(self.attempts),
            "rollbacks": self.rollbacks,
            "conflict-lines": sorted({line for a in self.attempts for line in a.conflict_lines}),
            "chain-length": max(
                (max(a.read_links, a.write_links) for a in self.attempts), default=0
            ),
            "signature-bytes": sum(a.signature_bytes for a in self.attempts),
            "flush-bytes": sum(a.flush_bytes for a in self.attempts),
            "invalidation-bytes": sum(a.invalidation_bytes for a in self.attempts),
            "bytes": self.coherence_bytes,
        }


class Attempt:  # pylint: disable=too-many-instance-attributes
    """Live state of a kernel's current execution.

    Every attempt starts from the kernel's checkpoint, so a rollback simply opens a new
    attempt. The exact sets sit beside the signatures: the CPU list is what conflict checks
    test against the read signature and the PIM sets drive conflicts between kernels.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        record: KernelRecord,
        locked: bool,
        start_time: float,
        rng: np.random.Generator,
        bits: int,
        hashes: int,
        capacity: int,
        exact: bool,
    ):
        """Open a new attempt with empty sets."""
        self.record = record
        self.kernel = record.kernel
        self.info = AttemptRecord(len(record.attempts) + 1, locked, start_time)
        record.attempts.append(self.info)
        self.locked = locked
        self.checkpoint = 0
        self.acc = self.checkpoint
        self.read_set = Signature(rng, bits, hashes, capacity, exact)
        self.write_set = Signature(rng, bits, hashes, capacity, exact)
        self.cpu_write_set = Signature(rng, bits, hashes, capacity, exact)
        self.exact_reads: Set[int] = set()
        self.exact_writes: Set[int] = set()
        self.exact_cpu_writes: Set[int] = set()

    def record_access(self, origin: AccessOrigin, line: int) -> None:
        """Add a line to the set for its origin."""
        if origin == AccessOrigin.PIM_READ:
            self.read_set.insert(line)
            self.exact_reads.add(line)
        elif origin == AccessOrigin.PIM_WRITE:
            self.write_set.insert(line)
            self.exact_writes.add(line)
        else:
            self.cpu_write_set.insert(line)
            self.exact_cpu_writes.add(line)

    @property
    def touched(self) -> Set[int]:
        """Lines this attempt read or wrote."""
        return self.exact_reads | self.exact_writes
