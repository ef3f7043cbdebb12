"""CPU cache hierarchy: private L1 per core, shared inclusive L2 holding the line data."""

from enum import Enum
from typing import Callable, List, Optional, Tuple

from pim_simulation.coherence.cache import CacheLineMeta, SetAssociativeCache
from pim_simulation.coherence.directory import Directory
from pim_simulation.coherence.mesi import AccessEvent, MesiState
from pim_simulation.memory.memory_system import TimingConfig
from pim_simulation.units import DataSize

L1_BYTES = DataSize(64, "KB").bytes()
L1_WAYS = 4
L2_BYTES = DataSize(2, "MB").bytes()
L2_WAYS = 8


class HostLevel(Enum):
    """Where a CPU access was satisfied."""

    L1 = "l1"
    L2 = "l2"
    MEMORY = "memory"


class HostCaches:
    """Processor-side caches of all CPU cores.

    The L2 is inclusive and holds data and the dirty bit; the L1s only hold MESI states kept
    coherent by the processor-side directory over the cores.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        cores: int,
        timing: TimingConfig,
        l1_bytes: int = L1_BYTES,
        l1_ways: int = L1_WAYS,
        l2_bytes: int = L2_BYTES,
        l2_ways: int = L2_WAYS,
    ):
        """Create empty caches for cores CPU cores."""
        self.timing = timing
        self.l1 = [SetAssociativeCache(f"cpu{core}-l1", l1_bytes, l1_ways) for core in range(cores)]
        self.l2 = SetAssociativeCache("l2", l2_bytes, l2_ways)
        self.cores = Directory("processor", cores)
        self.l1_hits = 0
        self.l2_hits = 0
        self.misses = 0

    def level_of(self, core: int, line: int) -> HostLevel:
        """Level that would satisfy an access, without side effects."""
        if line in self.l1[core]:
            return HostLevel.L1
        if line in self.l2:
            return HostLevel.L2
        return HostLevel.MEMORY

    def core_access(self, core: int, line: int, write: bool, after_fill: bool = False) -> float:
        """Bring a line already in the L2 into a core's L1 with the right permission.

        Args:
            core (int): requesting core
            line (int): line number
            write (bool): whether write permission is needed
            after_fill (bool): the line was just filled from memory for this access

        Returns:
            float: on-chip latency of the access
        """
        assert line in self.l2, f"Line {line} is not in the L2"
        state_before = self.cores.holder_state(line, core)
        event = AccessEvent.WRITE if write else AccessEvent.READ
        messages = self.cores.access(core, line, event)
        for message in messages:
            if message.agent != core and self.cores.holder_state(line, message.agent) == (
                MesiState.INVALID
            ):
                self.l1[message.agent].remove(line)
        state = self.cores.holder_state(line, core)
        meta = self.l1[core].lookup(line)
        if meta is None:
            victim = self.l1[core].insert(line, CacheLineMeta(state))
            if victim is not None:
                self.cores.access(core, victim[0], AccessEvent.EVICT)
        else:
            meta.state = state
        for holder in range(len(self.l1)):
            resident = self.l1[holder].peek(line)
            if resident is not None:
                resident.state = self.cores.holder_state(line, holder)
        if state_before.valid and not messages:
            self.l1_hits += 1
            return self.timing.cpu_l1_latency
        if not after_fill:
            self.l2_hits += 1
        return self.timing.cpu_l2_latency

    def install(
        self, line: int, data: List[int], dirty: bool = False
    ) -> Optional[Tuple[int, CacheLineMeta]]:
        """Fill a line into the L2; returns the L2 victim after removing it from every L1."""
        self.misses += 1
        victim = self.l2.insert(line, CacheLineMeta(MesiState.EXCLUSIVE, list(data), dirty))
        if victim is not None:
            self._drop_from_l1s(victim[0])
        return victim

    def invalidate(self, line: int) -> Optional[CacheLineMeta]:
        """Remove a line from every level, returning the L2 copy (data and dirty bit)."""
        self._drop_from_l1s(line)
        return self.l2.remove(line)

    def read_word(self, line: int, word: int) -> int:
        """Word of a resident line."""
        meta = self.l2.peek(line)
        assert meta is not None, f"Line {line} is not cached"
        return meta.data[word]

    def write_word(self, line: int, word: int, value: int) -> None:
        """Update a resident line and mark it dirty."""
        meta = self.l2.peek(line)
        assert meta is not None, f"Line {line} is not cached"
        meta.data[word] = value
        meta.dirty = True

    def data_of(self, line: int) -> Optional[List[int]]:
        """Data of a resident line."""
        meta = self.l2.peek(line)
        return None if meta is None else meta.data

    def is_dirty(self, line: int) -> bool:
        """Whether the host holds a modified copy."""
        meta = self.l2.peek(line)
        return meta is not None and meta.dirty

    def mark_clean(self, line: int) -> None:
        """Record that DRAM now holds the host's copy."""
        meta = self.l2.peek(line)
        if meta is not None:
            meta.dirty = False

    def dirty_lines(self, keep: Callable[[int], bool] = lambda line: True) -> List[int]:
        """Dirty lines in the L2 accepted by keep, in line order."""
        return sorted(line for line, meta in self.l2.items() if meta.dirty and keep(line))

    def cached_lines(self, keep: Callable[[int], bool] = lambda line: True) -> List[int]:
        """Resident lines accepted by keep, in line order."""
        return sorted(line for line, _ in self.l2.items() if keep(line))

    def check_inclusion(self) -> Optional[str]:
        """None when every L1 line is in the L2 and the core directory agrees with the L1s."""
        for core, l1 in enumerate(self.l1):
            for line, meta in l1.items():
                if line not in self.l2:
                    return f"line {line} in cpu{core} L1 but not in the L2"
                if self.cores.holder_state(line, core) != meta.state:
                    return f"line {line} in cpu{core} L1 disagrees with the processor directory"
        return self.cores.check_swmr()

    def _drop_from_l1s(self, line: int) -> None:
        for core, l1 in enumerate(self.l1):
            if l1.remove(line) is not None:
                self.cores.access(core, line, AccessEvent.EVICT)
