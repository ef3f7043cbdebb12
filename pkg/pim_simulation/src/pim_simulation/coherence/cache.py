"""Set-associative tag and data store shared by the CPU and PIM cache models."""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from pim_simulation.coherence.mesi import MesiState
from pim_simulation.pim_utils import LINE_BYTES, WORDS_PER_LINE


@dataclass
class CacheLineMeta:
    """State kept with one cached line."""

    state: MesiState = MesiState.INVALID
    data: List[int] = field(default_factory=lambda: [0] * WORDS_PER_LINE)
    dirty: bool = False
    speculative: bool = False
    dirty_mask: int = 0


class SetAssociativeCache:
    """LRU set-associative cache indexed by line number."""

    def __init__(self, name: str, size_bytes: int, ways: int, line_bytes: int = LINE_BYTES):
        """Build an empty cache."""
        assert size_bytes % (ways * line_bytes) == 0, f"{name}: size not a multiple of a set"
        self.name = name
        self.ways = ways
        self.num_sets = size_bytes // (ways * line_bytes)
        self._sets: List["OrderedDict[int, CacheLineMeta]"] = [
            OrderedDict() for _ in range(self.num_sets)
        ]
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def _set(self, line: int) -> "OrderedDict[int, CacheLineMeta]":
        return self._sets[line % self.num_sets]

    def __contains__(self, line: int) -> bool:
        """Whether the line is present (no LRU update)."""
        return line in self._set(line)

    def __len__(self) -> int:
        """Number of resident lines."""
        return sum(len(cache_set) for cache_set in self._sets)

    def peek(self, line: int) -> Optional[CacheLineMeta]:
        """Metadata of a resident line without touching LRU or counters."""
        return self._set(line).get(line)

    def lookup(self, line: int) -> Optional[CacheLineMeta]:
        """Metadata of a resident line, counting a hit or a miss and updating LRU."""
        cache_set = self._set(line)
        meta = cache_set.get(line)
        if meta is None:
            self.misses += 1
            return None
        self.hits += 1
        cache_set.move_to_end(line)
        return meta

    def victim_for(self, line: int) -> Optional[Tuple[int, CacheLineMeta]]:
        """Line that inserting this line would evict, if any."""
        cache_set = self._set(line)
        if line in cache_set or len(cache_set) < self.ways:
            return None
        victim = next(iter(cache_set))
        return victim, cache_set[victim]

    def insert(self, line: int, meta: CacheLineMeta) -> Optional[Tuple[int, CacheLineMeta]]:
        """Install a line as most recently used, returning the evicted line if any."""
        victim = self.victim_for(line)
        cache_set = self._set(line)
        if victim is not None:
            del cache_set[victim[0]]
            self.evictions += 1
        cache_set[line] = meta
        cache_set.move_to_end(line)
        return victim

    def remove(self, line: int) -> Optional[CacheLineMeta]:
        """Drop a line, returning its metadata."""
        return self._set(line).pop(line, None)

    def items(self) -> Iterator[Tuple[int, CacheLineMeta]]:
        """Resident lines in set order."""
        for cache_set in self._sets:
            yield from list(cache_set.items())

    def clear(self) -> List[Tuple[int, CacheLineMeta]]:
        """Drop every line, returning what was resident."""
        dropped = list(self.items())
        for cache_set in self._sets:
            cache_set.clear()
        return dropped
